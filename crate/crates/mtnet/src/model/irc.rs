//! Inter-hierarchy communication: N-ary Tree-LSTM aggregation of ordered
//! children into their parent node.

use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::{BoundAffine, BoundIrc, ModelError};

/// One child: its slot `position` within the fan-out, hidden state `h`
/// (1 x d_child) and optional memory cell `c` (1 x hidden). Leaves carry no
/// cell; a missing cell is exactly a zero vector.
pub struct IrcChild {
    pub position: usize,
    pub h: Var,
    pub c: Option<Var>,
}

/// Gate computation over the present children; absent fan-out positions are
/// implicit zero (h, c) pairs, which contribute nothing to any sum.
///
/// ```text
/// i   = sigmoid(e W_i + sum_l h_l U_i[l] + b_i)
/// f_k = sigmoid(e W_f + sum_l h_l U_f[k][l] + b_f)
/// o   = sigmoid(e W_o + sum_l h_l U_o[l] + b_o)
/// u   = tanh  (e W_u + sum_l h_l U_u[l] + b_u)
/// c   = i * u + sum_k f_k * c_k
/// h   = o * tanh(c)
/// ```
pub fn irc<T: Scalar>(
    tape: &mut Tape<T>,
    parent_input: Var,
    children: &[IrcChild],
    cell: &BoundIrc,
) -> Result<(Var, Var), ModelError> {
    if children.len() > cell.fanout {
        return Err(ModelError::FanoutExceeded { got: children.len(), fanout: cell.fanout });
    }
    for child in children {
        if child.position >= cell.fanout {
            return Err(ModelError::FanoutExceeded {
                got: child.position + 1,
                fanout: cell.fanout,
            });
        }
    }

    let gate_pre = |tape: &mut Tape<T>, w: Var, u: &dyn Fn(usize) -> Var, b: Var| -> Result<Var, ModelError> {
        let mut pre = tape.matmul(parent_input, w)?;
        for child in children {
            let term = tape.matmul(child.h, u(child.position))?;
            pre = tape.add(pre, term)?;
        }
        Ok(tape.add(pre, b)?)
    };

    let pre_i = gate_pre(tape, cell.w_i, &|p| cell.u_i[p], cell.b_i)?;
    let i = tape.sigmoid(pre_i);
    let pre_o = gate_pre(tape, cell.w_o, &|p| cell.u_o[p], cell.b_o)?;
    let o = tape.sigmoid(pre_o);
    let pre_u = gate_pre(tape, cell.w_u, &|p| cell.u_u[p], cell.b_u)?;
    let u = tape.tanh(pre_u);

    let mut c = tape.mul(i, u)?;
    for k in children {
        let Some(ck) = k.c else { continue };
        let pre_f = gate_pre(tape, cell.w_f, &|p| cell.u_f[k.position][p], cell.b_f)?;
        let f_k = tape.sigmoid(pre_f);
        let contrib = tape.mul(f_k, ck)?;
        c = tape.add(c, contrib)?;
    }

    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Ablation replacement for the Tree-LSTM: parent vector is an affine map
/// of the parent input concatenated with the mean of the child hidden
/// states (`child_rows` is M x d_child).
pub fn mean_pool_parent<T: Scalar>(
    tape: &mut Tape<T>,
    parent_input: Var,
    child_rows: Var,
    map: &BoundAffine,
) -> Result<Var, ModelError> {
    let (m, _) = tape.value(child_rows).rows_cols();
    let ones = tape.constant(Tensor::filled(&[1, m], T::of(1.0 / m as f64)));
    let mean = tape.matmul(ones, child_rows)?;
    let joined = tape.concat_last(&[parent_input, mean])?;
    let out = tape.matmul(joined, map.w)?;
    Ok(tape.add(out, map.b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::BoundIrc;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    struct RawCell {
        w: [Vec<f64>; 4],
        u: [Vec<f64>; 4],
        b: [Vec<f64>; 4],
        d_in: usize,
        d_child: usize,
        hidden: usize,
    }

    fn random_cell(d_in: usize, d_child: usize, hidden: usize, seed: u64) -> RawCell {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        RawCell {
            w: std::array::from_fn(|_| rand_vec(d_in * hidden, &mut rng)),
            u: std::array::from_fn(|_| rand_vec(d_child * hidden, &mut rng)),
            b: std::array::from_fn(|_| rand_vec(hidden, &mut rng)),
            d_in,
            d_child,
            hidden,
        }
    }

    fn bind_n1(tape: &mut Tape<f64>, cell: &RawCell) -> BoundIrc {
        let t = |data: &Vec<f64>, rows: usize, cols: usize| {
            Tensor::new(vec![rows, cols], data.clone()).unwrap()
        };
        let leaf = |tape: &mut Tape<f64>, tensor: Tensor<f64>| tape.leaf(tensor, false);
        BoundIrc {
            w_i: leaf(tape, t(&cell.w[0], cell.d_in, cell.hidden)),
            w_f: leaf(tape, t(&cell.w[1], cell.d_in, cell.hidden)),
            w_o: leaf(tape, t(&cell.w[2], cell.d_in, cell.hidden)),
            w_u: leaf(tape, t(&cell.w[3], cell.d_in, cell.hidden)),
            b_i: leaf(tape, Tensor::vector(cell.b[0].clone())),
            b_f: leaf(tape, Tensor::vector(cell.b[1].clone())),
            b_o: leaf(tape, Tensor::vector(cell.b[2].clone())),
            b_u: leaf(tape, Tensor::vector(cell.b[3].clone())),
            u_i: vec![leaf(tape, t(&cell.u[0], cell.d_child, cell.hidden))],
            u_f: vec![vec![leaf(tape, t(&cell.u[1], cell.d_child, cell.hidden))]],
            u_o: vec![leaf(tape, t(&cell.u[2], cell.d_child, cell.hidden))],
            u_u: vec![leaf(tape, t(&cell.u[3], cell.d_child, cell.hidden))],
            fanout: 1,
        }
    }

    /// Independent chain LSTM step on plain slices: no tape, no tensors.
    pub(crate) fn chain_lstm_step(
        cell_w: &[Vec<f64>; 4],
        cell_u: &[Vec<f64>; 4],
        cell_b: &[Vec<f64>; 4],
        d_in: usize,
        d_child: usize,
        hidden: usize,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let matvec = |m: &[f64], v: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c] += v[r] * m[r * cols + c];
                }
            }
            out
        };
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let gate = |gi: usize, act: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let a = matvec(&cell_w[gi], x, d_in, hidden);
            let b = matvec(&cell_u[gi], h_prev, d_child, hidden);
            (0..hidden).map(|j| act(a[j] + b[j] + cell_b[gi][j])).collect()
        };
        let i = gate(0, &|z| sigmoid(z));
        let f = gate(1, &|z| sigmoid(z));
        let o = gate(2, &|z| sigmoid(z));
        let u = gate(3, &|z| z.tanh());
        let c: Vec<f64> = (0..hidden).map(|j| i[j] * u[j] + f[j] * c_prev[j]).collect();
        let h: Vec<f64> = (0..hidden).map(|j| o[j] * c[j].tanh()).collect();
        (h, c)
    }

    #[test]
    fn zero_everything_gives_zero_hidden() {
        let mut tape = Tape::new();
        let zero = |tape: &mut Tape<f64>, rows, cols| {
            tape.constant(Tensor::zeros(&[rows, cols]))
        };
        let zerov = |tape: &mut Tape<f64>, n| tape.constant(Tensor::zeros(&[n]));
        let cell = BoundIrc {
            w_i: zero(&mut tape, 3, 4),
            w_f: zero(&mut tape, 3, 4),
            w_o: zero(&mut tape, 3, 4),
            w_u: zero(&mut tape, 3, 4),
            b_i: zerov(&mut tape, 4),
            b_f: zerov(&mut tape, 4),
            b_o: zerov(&mut tape, 4),
            b_u: zerov(&mut tape, 4),
            u_i: vec![],
            u_f: vec![],
            u_o: vec![],
            u_u: vec![],
            fanout: 0,
        };
        let e = tape.constant(Tensor::zeros(&[1, 3]));
        let (h, c) = irc(&mut tape, e, &[], &cell).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn n1_equals_independent_chain_lstm() {
        let (d_in, hidden) = (3, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        for trial in 0..100 {
            let cell = random_cell(d_in, hidden, hidden, 5000 + trial);
            let x = rand_vec(d_in, &mut rng);
            let h_prev = rand_vec(hidden, &mut rng);
            let c_prev = rand_vec(hidden, &mut rng);

            let (h_ref, c_ref) = chain_lstm_step(
                &cell.w, &cell.u, &cell.b, d_in, hidden, hidden, &x, &h_prev, &c_prev,
            );

            let mut tape = Tape::new();
            let bound = bind_n1(&mut tape, &cell);
            let e = tape.constant(Tensor::new(vec![1, d_in], x.clone()).unwrap());
            let hv = tape.constant(Tensor::new(vec![1, hidden], h_prev.clone()).unwrap());
            let cv = tape.constant(Tensor::new(vec![1, hidden], c_prev.clone()).unwrap());
            let (h, c) = irc(
                &mut tape,
                e,
                &[IrcChild { position: 0, h: hv, c: Some(cv) }],
                &bound,
            )
            .unwrap();

            for j in 0..hidden {
                assert!(
                    (tape.value(h).data()[j] - h_ref[j]).abs() < 1e-10,
                    "trial {trial}: hidden mismatch"
                );
                assert!(
                    (tape.value(c).data()[j] - c_ref[j]).abs() < 1e-10,
                    "trial {trial}: cell mismatch"
                );
            }
        }
    }

    #[test]
    fn saturated_forget_gate_passes_cells_through() {
        let (d_in, d_child, hidden) = (3, 4, 4);
        let cell = random_cell(d_in, d_child, hidden, 77);
        let mut tape = Tape::new();
        let mut bound = bind_n1(&mut tape, &cell);
        // Push the forget bias deep into saturation.
        bound.b_f = tape.constant(Tensor::filled(&[hidden], 20.0));

        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let x = rand_vec(d_in, &mut rng);
        let h_prev = rand_vec(d_child, &mut rng);
        let c_prev = rand_vec(hidden, &mut rng);
        let e = tape.constant(Tensor::new(vec![1, d_in], x).unwrap());
        let hv = tape.constant(Tensor::new(vec![1, d_child], h_prev).unwrap());
        let cv = tape.constant(Tensor::new(vec![1, hidden], c_prev.clone()).unwrap());
        let (_, c) =
            irc(&mut tape, e, &[IrcChild { position: 0, h: hv, c: Some(cv) }], &bound).unwrap();

        // c should be i*u + c_prev to within the sigmoid saturation error.
        let i_gate = {
            let pre_i_hand: Vec<f64> = {
                // recompute i*u independently
                let e_val = tape.value(e).data().to_vec();
                let h_val = tape.value(hv).data().to_vec();
                let matvec = |m: &Vec<f64>, v: &[f64], rows: usize, cols: usize| {
                    let mut out = vec![0.0; cols];
                    for r in 0..rows {
                        for cc in 0..cols {
                            out[cc] += v[r] * m[r * cols + cc];
                        }
                    }
                    out
                };
                let a = matvec(&cell.w[0], &e_val, d_in, hidden);
                let b = matvec(&cell.u[0], &h_val, d_child, hidden);
                (0..hidden).map(|j| a[j] + b[j] + cell.b[0][j]).collect()
            };
            pre_i_hand
        };
        let u_gate: Vec<f64> = {
            let e_val = tape.value(e).data().to_vec();
            let h_val = tape.value(hv).data().to_vec();
            let matvec = |m: &Vec<f64>, v: &[f64], rows: usize, cols: usize| {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for cc in 0..cols {
                        out[cc] += v[r] * m[r * cols + cc];
                    }
                }
                out
            };
            let a = matvec(&cell.w[3], &e_val, d_in, hidden);
            let b = matvec(&cell.u[3], &h_val, d_child, hidden);
            (0..hidden).map(|j| (a[j] + b[j] + cell.b[3][j]).tanh()).collect()
        };
        for j in 0..hidden {
            let sig = 1.0 / (1.0 + (-i_gate[j]).exp());
            let expect = sig * u_gate[j] + c_prev[j];
            assert!(
                (tape.value(c).data()[j] - expect).abs() < 1e-6,
                "saturated forget should pass the cell through"
            );
        }
    }

    #[test]
    fn too_many_children_is_an_error() {
        let cell = random_cell(3, 4, 4, 7);
        let mut tape = Tape::new();
        let bound = bind_n1(&mut tape, &cell);
        let e = tape.constant(Tensor::zeros(&[1, 3]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        let children = vec![
            IrcChild { position: 0, h, c: None },
            IrcChild { position: 1, h, c: None },
        ];
        assert!(matches!(
            irc(&mut tape, e, &children, &bound),
            Err(ModelError::FanoutExceeded { got: 2, fanout: 1 })
        ));
    }

    #[test]
    fn absent_positions_equal_explicit_zero_padding() {
        // Fan-out 3 with only position 1 occupied must equal the same cell
        // fed explicit zero (h, c) at positions 0 and 2.
        let (d_in, d_child, hidden) = (2, 3, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape<f64>, rows: usize, cols: usize, rng: &mut ChaCha20Rng| {
            let t = Tensor::new(vec![rows, cols], rand_vec(rows * cols, rng)).unwrap();
            tape.constant(t)
        };
        let mkv = |tape: &mut Tape<f64>, n: usize, rng: &mut ChaCha20Rng| {
            let t = Tensor::vector(rand_vec(n, rng));
            tape.constant(t)
        };
        let cell = BoundIrc {
            w_i: mk(&mut tape, d_in, hidden, &mut rng),
            w_f: mk(&mut tape, d_in, hidden, &mut rng),
            w_o: mk(&mut tape, d_in, hidden, &mut rng),
            w_u: mk(&mut tape, d_in, hidden, &mut rng),
            b_i: mkv(&mut tape, hidden, &mut rng),
            b_f: mkv(&mut tape, hidden, &mut rng),
            b_o: mkv(&mut tape, hidden, &mut rng),
            b_u: mkv(&mut tape, hidden, &mut rng),
            u_i: (0..3).map(|_| mk(&mut tape, d_child, hidden, &mut rng)).collect(),
            u_o: (0..3).map(|_| mk(&mut tape, d_child, hidden, &mut rng)).collect(),
            u_u: (0..3).map(|_| mk(&mut tape, d_child, hidden, &mut rng)).collect(),
            u_f: (0..3)
                .map(|_| (0..3).map(|_| mk(&mut tape, d_child, hidden, &mut rng)).collect())
                .collect(),
            fanout: 3,
        };
        let e = mk(&mut tape, 1, d_in, &mut rng);
        let h1 = mk(&mut tape, 1, d_child, &mut rng);
        let c1 = mk(&mut tape, 1, hidden, &mut rng);

        let (h_sparse, c_sparse) =
            irc(&mut tape, e, &[IrcChild { position: 1, h: h1, c: Some(c1) }], &cell).unwrap();

        let zh = tape.constant(Tensor::zeros(&[1, d_child]));
        let zc = tape.constant(Tensor::zeros(&[1, hidden]));
        let padded = vec![
            IrcChild { position: 0, h: zh, c: Some(zc) },
            IrcChild { position: 1, h: h1, c: Some(c1) },
            IrcChild { position: 2, h: zh, c: Some(zc) },
        ];
        let (h_padded, c_padded) = irc(&mut tape, e, &padded, &cell).unwrap();

        assert!(tape.value(h_sparse).max_abs_diff(tape.value(h_padded)) < 1e-12);
        assert!(tape.value(c_sparse).max_abs_diff(tape.value(c_padded)) < 1e-12);
    }
}
