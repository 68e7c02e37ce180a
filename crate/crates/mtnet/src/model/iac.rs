//! Intra-hierarchy communication: multi-head self-attention among sibling
//! nodes under one parent, followed by the position-wise feed-forward, with
//! residual connections and layer normalization around both.

use std::sync::Arc;

use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

use super::{BoundIacStack, ModelConfig, ModelError};

pub struct IacOutput {
    pub out: Var,
    /// Attention weight matrices, one per (layer, head), for diagnostics
    /// and the distribution invariants.
    pub alphas: Vec<Var>,
}

/// Run the attention stack over an M x W sibling group.
///
/// `padded[i] = true` marks rows that only exist as padding: they receive
/// exactly zero attention weight from every other row and their attention
/// output is zeroed, so real rows are unaffected by their presence.
pub fn iac<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    padded: Option<&[bool]>,
    stack: &BoundIacStack,
    cfg: &ModelConfig,
    mut train_rng: Option<&mut ChaCha20Rng>,
) -> Result<IacOutput, ModelError> {
    let (m, width) = tape.value(x).rows_cols();
    if let Some(padded) = padded {
        debug_assert_eq!(padded.len(), m);
        if padded.iter().all(|&p| p) {
            return Err(ModelError::AllMasked);
        }
    }
    let heads = cfg.iac_heads;
    let inv_scale = T::of(1.0 / ((width as f64 / heads as f64).sqrt()));
    let eps = T::of(cfg.ln_eps);

    // Score mask: column j blocked when j is padding.
    let score_mask: Option<Arc<Vec<bool>>> = padded.map(|p| {
        let mut mask = Vec::with_capacity(m * m);
        for _i in 0..m {
            for j in 0..m {
                mask.push(p[j]);
            }
        }
        Arc::new(mask)
    });
    // Row mask over M x W outputs: zero out the padded rows themselves.
    let row_mask: Option<Arc<Vec<bool>>> = padded.map(|p| {
        let mut mask = Vec::with_capacity(m * width);
        for &pi in p {
            for _ in 0..width {
                mask.push(pi);
            }
        }
        Arc::new(mask)
    });

    let mut cur = x;
    let mut alphas = Vec::new();
    for layer in &stack.layers {
        let mut head_outs = Vec::with_capacity(layer.heads.len());
        for qkv in &layer.heads {
            let q = tape.matmul(cur, qkv.wq)?;
            let k = tape.matmul(cur, qkv.wk)?;
            let v = tape.matmul(cur, qkv.wv)?;
            let mut scores = tape.matmul_nt(q, k)?;
            scores = tape.scale(scores, inv_scale);
            if let Some(mask) = &score_mask {
                scores = tape.masked_fill(scores, mask.clone(), T::of(-1e30))?;
            }
            let alpha = tape.softmax_rows(scores);
            alphas.push(alpha);
            head_outs.push(tape.matmul(alpha, v)?);
        }
        let mut z = tape.concat_last(&head_outs)?;
        if let Some(mask) = &row_mask {
            z = tape.masked_fill(z, mask.clone(), T::zero())?;
        }
        let residual = tape.add(cur, z)?;
        let e_tilde = tape.layer_norm(residual, layer.ln1.0, layer.ln1.1, eps)?;

        let mut ff = tape.matmul(e_tilde, layer.ff1.w)?;
        ff = tape.add(ff, layer.ff1.b)?;
        ff = tape.relu(ff);
        if let Some(rng) = train_rng.as_deref_mut() {
            ff = tape.dropout(ff, cfg.dropout_ff, rng);
        }
        ff = tape.matmul(ff, layer.ff2.w)?;
        ff = tape.add(ff, layer.ff2.b)?;
        let residual2 = tape.add(e_tilde, ff)?;
        cur = tape.layer_norm(residual2, layer.ln2.0, layer.ln2.1, eps)?;
    }
    Ok(IacOutput { out: cur, alphas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::test_support::{toy_cfg, toy_dims};
    use crate::model::{bind_model, init_params, ParamStore};
    use rand::Rng;
    use rand::SeedableRng;

    fn setup(cfg: &ModelConfig) -> ParamStore<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        init_params(cfg, &toy_dims(), 3, &mut rng).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn single_node_attention_weight_is_one() {
        let cfg = toy_cfg();
        let store = setup(&cfg);
        let mut tape = Tape::new();
        let (bm, _) = bind_model(&store, &mut tape, &cfg, 3).unwrap();
        let x = tape.constant(random_matrix(1, cfg.d_checkin(), 5));
        let out = iac(&mut tape, x, None, bm.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();
        for alpha in &out.alphas {
            assert_eq!(tape.value(*alpha).data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_are_distributions_and_padding_gets_zero_weight() {
        let cfg = toy_cfg();
        let store = setup(&cfg);
        let mut tape = Tape::new();
        let (bm, _) = bind_model(&store, &mut tape, &cfg, 3).unwrap();
        let x = tape.constant(random_matrix(4, cfg.d_checkin(), 6));
        let padded = [false, false, false, true];
        let out =
            iac(&mut tape, x, Some(&padded), bm.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();
        for alpha in &out.alphas {
            let a = tape.value(*alpha);
            for r in 0..4 {
                let row: Vec<f64> = (0..4).map(|c| a.get2(r, c)).collect();
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "row {r} sums to {sum}");
                assert!(row.iter().all(|&w| w >= 0.0));
                assert_eq!(row[3], 0.0, "padded column must receive exactly zero weight");
            }
        }
    }

    #[test]
    fn masked_forward_matches_unmasked_on_real_rows() {
        let cfg = toy_cfg();
        let store = setup(&cfg);
        let w = cfg.d_checkin();
        let real = random_matrix(3, w, 7);

        let mut t1 = Tape::new();
        let (bm1, _) = bind_model(&store, &mut t1, &cfg, 3).unwrap();
        let x1 = t1.constant(real.clone());
        let plain = iac(&mut t1, x1, None, bm1.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();

        // Same three rows plus two zero padding rows.
        let mut padded_data = real.data().to_vec();
        padded_data.extend(vec![0.0; 2 * w]);
        let mut t2 = Tape::new();
        let (bm2, _) = bind_model(&store, &mut t2, &cfg, 3).unwrap();
        let x2 = t2.constant(Tensor::new(vec![5, w], padded_data).unwrap());
        let padded = [false, false, false, true, true];
        let masked =
            iac(&mut t2, x2, Some(&padded), bm2.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();

        let a = t1.value(plain.out);
        let b = t2.value(masked.out);
        for r in 0..3 {
            for c in 0..w {
                assert!(
                    (a.get2(r, c) - b.get2(r, c)).abs() < 1e-10,
                    "padding changed row {r} col {c}: {} vs {}",
                    a.get2(r, c),
                    b.get2(r, c)
                );
            }
        }
    }

    #[test]
    fn all_masked_group_is_an_error() {
        let cfg = toy_cfg();
        let store = setup(&cfg);
        let mut tape = Tape::new();
        let (bm, _) = bind_model(&store, &mut tape, &cfg, 3).unwrap();
        let x = tape.constant(random_matrix(2, cfg.d_checkin(), 8));
        let err = iac(&mut tape, x, Some(&[true, true]), bm.iac_leaf.as_ref().unwrap(), &cfg, None);
        assert!(matches!(err, Err(ModelError::AllMasked)));
    }

    #[test]
    fn zero_value_and_ff_weights_reduce_to_layernorm_chain() {
        let cfg = toy_cfg();
        let mut store = setup(&cfg);
        let w = cfg.d_checkin();
        // Zero every value projection and both feed-forward maps: only the
        // residual path survives, so the stack is a chain of layer norms.
        let zero_names: Vec<String> = store
            .names()
            .filter(|n| n.contains(".wv") || n.contains(".ff1.w") || n.contains(".ff2.w"))
            .map(str::to_string)
            .collect();
        for name in zero_names {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store.set(&name, Tensor::zeros(&shape)).unwrap();
        }

        let x_val = random_matrix(3, w, 9);
        let mut tape = Tape::new();
        let (bm, _) = bind_model(&store, &mut tape, &cfg, 3).unwrap();
        let x = tape.constant(x_val.clone());
        let out = iac(&mut tape, x, None, bm.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();

        // Reference: four successive layer norms with unit gain, zero bias.
        let mut reference = tape.constant(x_val);
        let gain = tape.constant(Tensor::filled(&[w], 1.0));
        let bias = tape.constant(Tensor::zeros(&[w]));
        for _ in 0..cfg.iac_layers * 2 {
            reference = tape.layer_norm(reference, gain, bias, cfg.ln_eps).unwrap();
        }
        let diff = tape.value(out.out).max_abs_diff(tape.value(reference));
        assert!(diff < 1e-12, "residual-only path should be a layer-norm chain, diff {diff}");
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let cfg = toy_cfg();
        let store = setup(&cfg);
        let w = cfg.d_checkin();
        let x_val = random_matrix(4, w, 10);
        let perm = [2usize, 0, 3, 1];

        let mut t1 = Tape::new();
        let (bm1, _) = bind_model(&store, &mut t1, &cfg, 3).unwrap();
        let x1 = t1.constant(x_val.clone());
        let out1 = iac(&mut t1, x1, None, bm1.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();

        let mut permuted = vec![0.0; 4 * w];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * w..(dst + 1) * w].copy_from_slice(&x_val.data()[src * w..(src + 1) * w]);
        }
        let mut t2 = Tape::new();
        let (bm2, _) = bind_model(&store, &mut t2, &cfg, 3).unwrap();
        let x2 = t2.constant(Tensor::new(vec![4, w], permuted).unwrap());
        let out2 = iac(&mut t2, x2, None, bm2.iac_leaf.as_ref().unwrap(), &cfg, None).unwrap();

        // Row dst of the permuted output equals row perm[dst] of the
        // original: restoring the order restores the exact values.
        let a = t1.value(out1.out);
        let b = t2.value(out2.out);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..w {
                assert!((b.get2(dst, c) - a.get2(src, c)).abs() < 1e-10);
            }
        }
    }
}
