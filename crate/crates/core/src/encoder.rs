//! Modality encoders and attention fusion.
//!
//! Text features run through a bidirectional GRU over the utterance
//! sequence; audio and video get affine projections. All three land in the
//! common hidden width, where a shared query vector scores each modality
//! per utterance and the softmax-weighted sum gives the fused feature `h_f`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::params::{normal, uniform, xavier, ParamStore};
use crate::tape::{Tape, Var};

/// GRU gates for one direction, PyTorch layout:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `n = tanh(xW_n + (r⊙h)U_n + b_n)`, `h' = (1−z)⊙n + z⊙h`.
#[derive(Clone, Copy, Debug)]
pub struct GruDirection {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruDirection {
    fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        for gate in GATES {
            store.insert(format!("{prefix}.w_{gate}"), uniform(input, hidden, bound, rng))?;
            store.insert(format!("{prefix}.u_{gate}"), uniform(hidden, hidden, bound, rng))?;
            store.insert(format!("{prefix}.b_{gate}"), uniform(1, hidden, bound, rng))?;
        }
        Ok(())
    }

    fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut get = |name: &str| tape.param(store, &format!("{prefix}.{name}"));
        Ok(Self {
            w_z: get("w_z")?,
            u_z: get("u_z")?,
            b_z: get("b_z")?,
            w_r: get("w_r")?,
            u_r: get("u_r")?,
            b_r: get("b_r")?,
            w_n: get("w_n")?,
            u_n: get("u_n")?,
            b_n: get("b_n")?,
        })
    }

    /// Hidden state after each step, in processing order.
    fn run(&self, tape: &mut Tape, x: Var, order: impl Iterator<Item = usize>) -> Vec<(usize, Var)> {
        let hidden = tape.shape(self.u_z).0;
        let xz = tape.matmul(x, self.w_z);
        let xz = tape.add_row(xz, self.b_z);
        let xr = tape.matmul(x, self.w_r);
        let xr = tape.add_row(xr, self.b_r);
        let xn = tape.matmul(x, self.w_n);
        let xn = tape.add_row(xn, self.b_n);
        let mut h = tape.constant(Matrix::zeros(1, hidden));
        let mut out = Vec::new();
        for t in order {
            let hz = tape.matmul(h, self.u_z);
            let xz_t = tape.row(xz, t);
            let z = tape.add(xz_t, hz);
            let z = tape.sigmoid(z);

            let hr = tape.matmul(h, self.u_r);
            let xr_t = tape.row(xr, t);
            let r = tape.add(xr_t, hr);
            let r = tape.sigmoid(r);

            let rh = tape.hadamard(r, h);
            let rhu = tape.matmul(rh, self.u_n);
            let xn_t = tape.row(xn, t);
            let n = tape.add(xn_t, rhu);
            let n = tape.tanh(n);

            let keep = tape.one_minus(z);
            let fresh = tape.hadamard(keep, n);
            let carried = tape.hadamard(z, h);
            h = tape.add(fresh, carried);
            out.push((t, h));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub forward: GruDirection,
    pub backward: GruDirection,
    /// `2·hidden → out` projection applied after concatenating directions.
    pub proj: Var,
    pub proj_bias: Var,
    pub hidden_dim: usize,
}

impl BiGruParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<()> {
        GruDirection::register(store, &format!("{prefix}.fwd"), input, hidden, rng)?;
        GruDirection::register(store, &format!("{prefix}.bwd"), input, hidden, rng)?;
        store.insert(format!("{prefix}.proj"), xavier(2 * hidden, out, rng))?;
        store.insert(format!("{prefix}.proj_bias"), Matrix::zeros(1, out))?;
        Ok(())
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let forward = GruDirection::bind(tape, store, &format!("{prefix}.fwd"))?;
        let backward = GruDirection::bind(tape, store, &format!("{prefix}.bwd"))?;
        let hidden_dim = tape.shape(forward.u_z).0;
        Ok(Self {
            forward,
            backward,
            proj: tape.param(store, &format!("{prefix}.proj"))?,
            proj_bias: tape.param(store, &format!("{prefix}.proj_bias"))?,
            hidden_dim,
        })
    }
}

/// Per-utterance `[h_forward | h_backward]`, shape `n × 2·hidden`.
pub fn bigru_states(tape: &mut Tape, x: Var, p: &BiGruParams) -> Var {
    let n = tape.shape(x).0;
    let fwd = p.forward.run(tape, x, 0..n);
    let mut bwd = p.backward.run(tape, x, (0..n).rev());
    bwd.reverse();
    let rows: Vec<Var> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&(_, f), &(_, b))| tape.concat_cols(&[f, b]))
        .collect();
    tape.concat_rows(&rows)
}

/// Bi-GRU states projected to the common hidden width.
pub fn bigru_forward(tape: &mut Tape, x: Var, p: &BiGruParams) -> Var {
    let states = bigru_states(tape, x, p);
    let projected = tape.matmul(states, p.proj);
    tape.add_row(projected, p.proj_bias)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Video,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    /// `d × 1` query shared across modalities.
    pub q: Var,
    pub audio_w: Var,
    pub audio_b: Var,
    pub video_w: Var,
    pub video_b: Var,
}

impl FusionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        audio_dim: usize,
        video_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<()> {
        let q_std = 1.0 / libm::sqrt(hidden as f64);
        store.insert(format!("{prefix}.q"), normal(hidden, 1, q_std, rng))?;
        store.insert(format!("{prefix}.audio_w"), xavier(audio_dim, hidden, rng))?;
        store.insert(format!("{prefix}.audio_b"), Matrix::zeros(1, hidden))?;
        store.insert(format!("{prefix}.video_w"), xavier(video_dim, hidden, rng))?;
        store.insert(format!("{prefix}.video_b"), Matrix::zeros(1, hidden))?;
        Ok(())
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut get = |name: &str| tape.param(store, &format!("{prefix}.{name}"));
        Ok(Self {
            q: get("q")?,
            audio_w: get("audio_w")?,
            audio_b: get("audio_b")?,
            video_w: get("video_w")?,
            video_b: get("video_b")?,
        })
    }
}

pub fn project_modality(tape: &mut Tape, x: Var, which: Modality, p: &FusionParams) -> Var {
    let (w, b) = match which {
        Modality::Audio => (p.audio_w, p.audio_b),
        Modality::Video => (p.video_w, p.video_b),
    };
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Returns `(h_f, weights)` with `weights` an `n × 3` matrix over (text, audio, video).
pub fn fuse_attention(tape: &mut Tape, h_t: Var, h_a: Var, h_v: Var, p: &FusionParams) -> (Var, Var) {
    let modalities = [h_t, h_a, h_v];
    let scores: Vec<Var> = modalities.iter().map(|&h| tape.matmul(h, p.q)).collect();
    let scores = tape.concat_cols(&scores);
    let weights = tape.softmax_rows(scores);
    let mut fused = None;
    for (m, &h) in modalities.iter().enumerate() {
        let w = tape.slice_cols(weights, m, 1);
        let part = tape.mul_col(h, w);
        fused = Some(match fused {
            None => part,
            Some(acc) => tape.add(acc, part),
        });
    }
    (fused.expect("three modalities"), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with_gru(input: usize, hidden: usize, out: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        BiGruParams::register(&mut store, "gru", input, hidden, out, &mut rng).unwrap();
        store
    }

    fn zero_all(store: &mut ParamStore) {
        let names: Vec<_> = store.names().map(alloc::string::String::from).collect();
        for n in names {
            let (r, c) = store.value(&n).unwrap().shape();
            store.set_value(&n, Matrix::zeros(r, c)).unwrap();
        }
    }

    #[test]
    fn zero_gru_outputs_zero() {
        let mut store = store_with_gru(3, 4, 5, 0);
        zero_all(&mut store);
        let mut tape = Tape::new();
        let p = BiGruParams::bind(&mut tape, &store, "gru").unwrap();
        let x = tape.constant(Matrix::from_fn(6, 3, |r, c| (r + c) as f64 - 2.0));
        let out = bigru_forward(&mut tape, x, &p);
        assert_eq!(tape.shape(out), (6, 5));
        assert!(tape.value(out).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_both_directions_see_same_input() {
        let mut store = store_with_gru(2, 3, 3, 1);
        // Identical direction weights make a 1-step sequence symmetric.
        let fwd: Vec<_> = store
            .names()
            .filter(|n| n.starts_with("gru.fwd."))
            .map(alloc::string::String::from)
            .collect();
        for n in fwd {
            let v = store.value(&n).unwrap().clone();
            store.set_value(&n.replace("fwd", "bwd"), v).unwrap();
        }
        let mut tape = Tape::new();
        let p = BiGruParams::bind(&mut tape, &store, "gru").unwrap();
        let x = tape.constant(Matrix::row_vector(&[0.4, -1.2]));
        let states = bigru_states(&mut tape, x, &p);
        let s = tape.value(states);
        assert_eq!(s.slice_cols(0, 3), s.slice_cols(3, 3));
    }

    /// Scalar GRU recurrence written out by hand.
    fn scalar_gru(xs: &[f64], w: [f64; 3], u: [f64; 3], b: [f64; 3]) -> Vec<f64> {
        let mut h = 0.0;
        let mut out = Vec::new();
        for &x in xs {
            let z = sigmoid(x * w[0] + h * u[0] + b[0]);
            let r = sigmoid(x * w[1] + h * u[1] + b[1]);
            let n = libm::tanh(x * w[2] + r * h * u[2] + b[2]);
            h = (1.0 - z) * n + z * h;
            out.push(h);
        }
        out
    }

    #[test]
    fn matches_hand_rollout_at_width_one() {
        let store = store_with_gru(1, 1, 1, 2);
        let read = |dir: &str, kind: &str| -> [f64; 3] {
            let mut v = [0.0; 3];
            for (i, g) in GATES.iter().enumerate() {
                v[i] = store.value(&format!("gru.{dir}.{kind}_{g}")).unwrap()[(0, 0)];
            }
            v
        };
        let xs = [0.7, -0.3, 1.1];
        let fwd = scalar_gru(&xs, read("fwd", "w"), read("fwd", "u"), read("fwd", "b"));
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        let mut bwd = scalar_gru(&rev, read("bwd", "w"), read("bwd", "u"), read("bwd", "b"));
        bwd.reverse();

        let mut tape = Tape::new();
        let p = BiGruParams::bind(&mut tape, &store, "gru").unwrap();
        let x = tape.constant(Matrix::from_rows(&[[0.7], [-0.3], [1.1]]).unwrap());
        let states = bigru_states(&mut tape, x, &p);
        let s = tape.value(states);
        for t in 0..3 {
            assert!((s[(t, 0)] - fwd[t]).abs() < 1e-12);
            assert!((s[(t, 1)] - bwd[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_is_order_sensitive() {
        let store = store_with_gru(3, 4, 4, 3);
        let x = Matrix::from_fn(4, 3, |r, c| libm::sin((r * 3 + c) as f64));
        let swapped = Matrix::concat_rows(&[&x.slice_rows(1, 1), &x.slice_rows(0, 1), &x.slice_rows(2, 2)]);
        let run = |m: &Matrix| {
            let mut tape = Tape::new();
            let p = BiGruParams::bind(&mut tape, &store, "gru").unwrap();
            let xv = tape.constant(m.clone());
            let out = bigru_forward(&mut tape, xv, &p);
            tape.value(out).clone()
        };
        let (a, b) = (run(&x), run(&swapped));
        // Rows 2 and 3 hold the same utterances but different histories.
        assert!(a.slice_rows(2, 2).max_abs_diff(&b.slice_rows(2, 2)) > 1e-6);
    }

    fn fusion_store(hidden: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        FusionParams::register(&mut store, "fuse", 3, 2, hidden, &mut rng).unwrap();
        store
    }

    #[test]
    fn projection_edge_cases() {
        let mut store = fusion_store(3, 4);
        let x = Matrix::from_rows(&[[0.2, -0.5, 1.5]]).unwrap();
        // Explicit dot-product expansion.
        let w = store.value("fuse.audio_w").unwrap().clone();
        let mut tape = Tape::new();
        let p = FusionParams::bind(&mut tape, &store, "fuse").unwrap();
        let xv = tape.constant(x.clone());
        let out = project_modality(&mut tape, xv, Modality::Audio, &p);
        for j in 0..3 {
            let expected: f64 = (0..3).map(|k| x[(0, k)] * w[(k, j)]).sum();
            assert!((tape.value(out)[(0, j)] - expected).abs() < 1e-12);
        }

        store.set_value("fuse.audio_w", Matrix::identity(3)).unwrap();
        let mut tape = Tape::new();
        let p = FusionParams::bind(&mut tape, &store, "fuse").unwrap();
        let xv = tape.constant(x.clone());
        let out = project_modality(&mut tape, xv, Modality::Audio, &p);
        assert_eq!(tape.value(out), &x);

        store.set_value("fuse.video_w", Matrix::zeros(2, 3)).unwrap();
        let mut tape = Tape::new();
        let p = FusionParams::bind(&mut tape, &store, "fuse").unwrap();
        let xv = tape.constant(Matrix::row_vector(&[3.0, 4.0]));
        let out = project_modality(&mut tape, xv, Modality::Video, &p);
        assert_eq!(tape.value(out), &Matrix::zeros(1, 3));
    }

    fn fuse_values(store: &ParamStore, ht: &Matrix, ha: &Matrix, hv: &Matrix) -> (Matrix, Matrix) {
        let mut tape = Tape::new();
        let p = FusionParams::bind(&mut tape, store, "fuse").unwrap();
        let (t, a, v) = (tape.constant(ht.clone()), tape.constant(ha.clone()), tape.constant(hv.clone()));
        let (f, w) = fuse_attention(&mut tape, t, a, v, &p);
        (tape.value(f).clone(), tape.value(w).clone())
    }

    #[test]
    fn equal_modalities_fuse_uniformly() {
        let store = fusion_store(3, 5);
        let h = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).unwrap();
        let (f, w) = fuse_values(&store, &h, &h, &h);
        assert!(w.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(f.max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn zero_query_is_uniform() {
        let mut store = fusion_store(2, 6);
        store.set_value("fuse.q", Matrix::zeros(2, 1)).unwrap();
        let (_, w) = fuse_values(
            &store,
            &Matrix::row_vector(&[5.0, 1.0]),
            &Matrix::row_vector(&[-3.0, 2.0]),
            &Matrix::row_vector(&[0.0, 9.0]),
        );
        assert!(w.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn aligned_query_picks_text() {
        let mut store = fusion_store(2, 7);
        store.set_value("fuse.q", Matrix::from_rows(&[[10.0], [0.0]]).unwrap()).unwrap();
        let ht = Matrix::row_vector(&[1.0, 0.0]);
        let (f, w) = fuse_values(&store, &ht, &Matrix::row_vector(&[0.0, 1.0]), &Matrix::row_vector(&[0.0, -1.0]));
        let e10 = libm::exp(10.0);
        assert!((w[(0, 0)] - e10 / (e10 + 2.0)).abs() < 1e-15);
        assert!((w[(0, 0)] - 0.99991).abs() < 1e-5);
        assert!(f.sub(&ht).frobenius_norm() / ht.frobenius_norm() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn fusion_weights_and_convexity(seed in any::<u64>(), shift in -5.0f64..5.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let store = fusion_store(4, seed);
                let gen = |rng: &mut ChaCha8Rng| normal(5, 4, 2.0, rng);
                let (ht, ha, hv) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
                let (f, w) = fuse_values(&store, &ht, &ha, &hv);
                for r in 0..5 {
                    prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(w.row(r).iter().all(|&x| x > 0.0));
                    for c in 0..4 {
                        let vals = [ht[(r, c)], ha[(r, c)], hv[(r, c)]];
                        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(f[(r, c)] >= lo - 1e-12 && f[(r, c)] <= hi + 1e-12);
                    }
                }
                // A constant added to every score leaves the weights unchanged;
                // shifting every modality along a direction orthogonal to nothing
                // is awkward, so shift the scores through q-aligned offsets instead.
                let q = store.value("fuse.q").unwrap().clone();
                let qn = q.transpose().matmul(&q)[(0, 0)];
                let offset = q.transpose().scale(shift / qn);
                let (_, w2) = fuse_values(&store, &ht.add_row(&offset), &ha.add_row(&offset), &hv.add_row(&offset));
                prop_assert!(w.max_abs_diff(&w2) < 1e-12);
            }

            #[test]
            fn projection_is_order_equivariant(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let store = fusion_store(3, seed ^ 1);
                let x = normal(4, 3, 1.0, &mut rng);
                let rev = Matrix::from_fn(4, 3, |r, c| x[(3 - r, c)]);
                let run = |m: &Matrix| {
                    let mut tape = Tape::new();
                    let p = FusionParams::bind(&mut tape, &store, "fuse").unwrap();
                    let xv = tape.constant(m.clone());
                    let out = project_modality(&mut tape, xv, Modality::Audio, &p);
                    tape.value(out).clone()
                };
                let (a, b) = (run(&x), run(&rev));
                for r in 0..4 {
                    prop_assert_eq!(a.row(r), b.row(3 - r));
                }
            }
        }
    }
}
