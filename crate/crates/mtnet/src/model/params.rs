//! Typed tape handles over the named parameter store, rebuilt per forward
//! pass.

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

use super::{BoundStore, ModelConfig, ModelError, ParamStore};

#[derive(Clone, Copy)]
pub struct BoundAffine {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy)]
pub struct BoundQkv {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

#[derive(Clone)]
pub struct BoundIacLayer {
    pub heads: Vec<BoundQkv>,
    pub ln1: (Var, Var),
    pub ff1: BoundAffine,
    pub ff2: BoundAffine,
    pub ln2: (Var, Var),
}

#[derive(Clone)]
pub struct BoundIacStack {
    pub layers: Vec<BoundIacLayer>,
}

/// One N-ary Tree-LSTM cell: gate input maps, per-position child maps, the
/// position-pair forget maps, and biases.
#[derive(Clone)]
pub struct BoundIrc {
    pub w_i: Var,
    pub w_f: Var,
    pub w_o: Var,
    pub w_u: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_o: Var,
    pub b_u: Var,
    pub u_i: Vec<Var>,
    pub u_o: Vec<Var>,
    pub u_u: Vec<Var>,
    /// `u_f[k][l]`: contribution of child `l` to child `k`'s forget gate.
    pub u_f: Vec<Vec<Var>>,
    pub fanout: usize,
}

/// Child-to-parent aggregation, either the Tree-LSTM cell or its
/// mean-pool-plus-linear ablation replacement.
#[derive(Clone)]
pub enum IrcBinding {
    Gates(BoundIrc),
    MeanPool(BoundAffine),
}

pub struct LogSigmas {
    pub poi: Var,
    pub geo: Option<Var>,
    pub cat: Option<Var>,
}

/// Every handle the forward pass needs, resolved once per tape.
pub struct BoundModel {
    pub emb_user: Var,
    pub emb_poi: Var,
    pub emb_cat: Var,
    pub emb_geo: Var,
    pub emb_hour: Var,
    pub emb_period_slot: Var,
    pub emb_dow: Var,
    /// Absent when the attention steps are ablated to identity.
    pub iac_leaf: Option<BoundIacStack>,
    pub iac_period: Option<BoundIacStack>,
    pub irc_leaf: IrcBinding,
    pub irc_day: IrcBinding,
    pub head_day: BoundAffine,
    pub head_period: BoundAffine,
    pub head_checkin: BoundAffine,
    pub head_geo: Option<BoundAffine>,
    pub head_cat: Option<BoundAffine>,
    pub log_sigma: Option<LogSigmas>,
    pub leaf_fanout: usize,
}

fn affine(bound: &BoundStore, base: &str) -> Result<BoundAffine, ModelError> {
    Ok(BoundAffine { w: bound.var(&format!("{base}.w"))?, b: bound.var(&format!("{base}.b"))? })
}

fn iac_stack(
    bound: &BoundStore,
    stack: &str,
    cfg: &ModelConfig,
) -> Result<BoundIacStack, ModelError> {
    let mut layers = Vec::with_capacity(cfg.iac_layers);
    for layer in 0..cfg.iac_layers {
        let base = format!("iac.{stack}.l{layer}");
        let mut heads = Vec::with_capacity(cfg.iac_heads);
        for head in 0..cfg.iac_heads {
            heads.push(BoundQkv {
                wq: bound.var(&format!("{base}.h{head}.wq"))?,
                wk: bound.var(&format!("{base}.h{head}.wk"))?,
                wv: bound.var(&format!("{base}.h{head}.wv"))?,
            });
        }
        layers.push(BoundIacLayer {
            heads,
            ln1: (bound.var(&format!("{base}.ln1.gain"))?, bound.var(&format!("{base}.ln1.bias"))?),
            ff1: affine(bound, &format!("{base}.ff1"))?,
            ff2: affine(bound, &format!("{base}.ff2"))?,
            ln2: (bound.var(&format!("{base}.ln2.gain"))?, bound.var(&format!("{base}.ln2.bias"))?),
        });
    }
    Ok(BoundIacStack { layers })
}

fn irc_cell(bound: &BoundStore, level: &str, fanout: usize) -> Result<BoundIrc, ModelError> {
    let base = format!("irc.{level}");
    let gate = |g: &str| bound.var(&format!("{base}.w.{g}"));
    let bias = |g: &str| bound.var(&format!("{base}.b.{g}"));
    let upos = |g: &str, pos: usize| bound.var(&format!("{base}.u.{g}.{pos}"));
    let mut u_i = Vec::with_capacity(fanout);
    let mut u_o = Vec::with_capacity(fanout);
    let mut u_u = Vec::with_capacity(fanout);
    let mut u_f = Vec::with_capacity(fanout);
    for pos in 0..fanout {
        u_i.push(upos("i", pos)?);
        u_o.push(upos("o", pos)?);
        u_u.push(upos("u", pos)?);
        let mut row = Vec::with_capacity(fanout);
        for l in 0..fanout {
            row.push(bound.var(&format!("{base}.u.f.{pos}.{l}"))?);
        }
        u_f.push(row);
    }
    Ok(BoundIrc {
        w_i: gate("i")?,
        w_f: gate("f")?,
        w_o: gate("o")?,
        w_u: gate("u")?,
        b_i: bias("i")?,
        b_f: bias("f")?,
        b_o: bias("o")?,
        b_u: bias("u")?,
        u_i,
        u_o,
        u_u,
        u_f,
        fanout,
    })
}

/// Insert all parameters into `tape` and resolve the typed handle structure.
pub fn bind_model<T: Scalar>(
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    leaf_fanout: usize,
) -> Result<(BoundModel, BoundStore), ModelError> {
    let bound = store.bind(tape);
    let model = BoundModel {
        emb_user: bound.var("emb.user")?,
        emb_poi: bound.var("emb.poi")?,
        emb_cat: bound.var("emb.cat")?,
        emb_geo: bound.var("emb.geo")?,
        emb_hour: bound.var("emb.hour")?,
        emb_period_slot: bound.var("emb.period_slot")?,
        emb_dow: bound.var("emb.dow")?,
        iac_leaf: if cfg.ablation.no_iac { None } else { Some(iac_stack(&bound, "leaf", cfg)?) },
        iac_period: if cfg.ablation.no_iac {
            None
        } else {
            Some(iac_stack(&bound, "period", cfg)?)
        },
        irc_leaf: if cfg.ablation.no_irc {
            IrcBinding::MeanPool(affine(&bound, "irc_repl.period")?)
        } else {
            IrcBinding::Gates(irc_cell(&bound, "leaf", leaf_fanout)?)
        },
        irc_day: if cfg.ablation.no_irc {
            IrcBinding::MeanPool(affine(&bound, "irc_repl.day")?)
        } else {
            IrcBinding::Gates(irc_cell(&bound, "day", cfg.slots_per_day)?)
        },
        head_day: affine(&bound, "head.day")?,
        head_period: affine(&bound, "head.period")?,
        head_checkin: affine(&bound, "head.checkin")?,
        head_geo: if cfg.ablation.no_geo_head { None } else { Some(affine(&bound, "head.geo")?) },
        head_cat: if cfg.ablation.no_cat_head { None } else { Some(affine(&bound, "head.cat")?) },
        log_sigma: if cfg.ablation.no_multitask {
            None
        } else {
            Some(LogSigmas {
                poi: bound.var("loss.log_sigma.l")?,
                geo: if cfg.ablation.no_geo_head {
                    None
                } else {
                    Some(bound.var("loss.log_sigma.g")?)
                },
                cat: if cfg.ablation.no_cat_head {
                    None
                } else {
                    Some(bound.var("loss.log_sigma.c")?)
                },
            })
        },
        leaf_fanout,
    };
    Ok((model, bound))
}
