//! Reverse-mode gradients against central finite differences.

use std::sync::Arc;

use copulagraph::autodiff::{Tape, Var};
use copulagraph::copula::nll_loss;
use copulagraph::marginals::{poisson_quantile, Family};
use copulagraph::model::{Coupling, GraphContext, Model, ModelVariant};
use copulagraph::nets::NetKind;
use copulagraph::params::ParamSet;
use copulagraph::{DenseMatrix, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{connected_graph, normal_matrix, perturbed, rng, spd};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-3;
pub const TRIALS: u64 = 100;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Checks `f` (scalar-valued) at `inputs` against central differences.
pub fn check<F>(name: &str, inputs: &[DenseMatrix], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<DenseMatrix> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |xs: &[DenseMatrix]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        f(&t, &vs).unwrap().item()
    };
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for e in 0..xs[k].data().len() {
            let orig = xs[k].data()[e];
            xs[k].data_mut()[e] = orig + STEP;
            let hi = eval(&xs);
            xs[k].data_mut()[e] = orig - STEP;
            let lo = eval(&xs);
            xs[k].data_mut()[e] = orig;
            let numeric = (hi - lo) / (2.0 * STEP);
            let a = analytic[k].data()[e];
            assert!(
                rel_err(a, numeric) <= TOL,
                "{name}: input {k} entry {e}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Contracts a matrix-valued node with fixed random weights.
fn contract<'t>(v: Var<'t>, w: &DenseMatrix) -> Result<Var<'t>> {
    Ok(v.mul(&v.tape().constant(w.clone()))?.sum())
}

fn away_from_zero(m: DenseMatrix) -> DenseMatrix {
    m.map(|x| x.signum() * (0.1 + x.abs()))
}

fn positive(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(0.3..3.0))
}

pub fn binary_ops() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let a = normal_matrix(&mut r, 3, 4);
        let b = normal_matrix(&mut r, 3, 4);
        let c = normal_matrix(&mut r, 4, 2);
        let w34 = normal_matrix(&mut r, 3, 4);
        let w32 = normal_matrix(&mut r, 3, 2);
        let s = DenseMatrix::scalar(r.random_range(-2.0..2.0));
        check("matmul", &[a.clone(), c.clone()], |_, v| contract(v[0].matmul(&v[1])?, &w32));
        check("add", &[a.clone(), b.clone()], |_, v| contract(v[0].add(&v[1])?, &w34));
        check("sub", &[a.clone(), b.clone()], |_, v| contract(v[0].sub(&v[1])?, &w34));
        check("mul", &[a.clone(), b.clone()], |_, v| contract(v[0].mul(&v[1])?, &w34));
        check("scale_by", &[a.clone(), s], |_, v| contract(v[0].scale_by(&v[1])?, &w34));
        check("concat_cols", &[a.clone(), b.clone()], |_, v| {
            let w = normal_matrix(&mut rng(seed + 1000), 3, 8);
            contract(v[0].concat_cols(&v[1])?, &w)
        });
    }
}

pub fn shape_ops() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let a = normal_matrix(&mut r, 4, 3);
        let w43 = normal_matrix(&mut r, 4, 3);
        let w34 = normal_matrix(&mut r, 3, 4);
        let w23 = normal_matrix(&mut r, 2, 3);
        let w42 = normal_matrix(&mut r, 4, 2);
        check("scale", &[a.clone()], |_, v| contract(v[0].scale(-1.7), &w43));
        check("add_const", &[a.clone()], |_, v| contract(v[0].add_const(0.4), &w43));
        check("t", &[a.clone()], |_, v| contract(v[0].t(), &w34));
        check("gather_rows", &[a.clone()], |_, v| {
            let w = normal_matrix(&mut rng(seed + 7), 5, 3);
            contract(v[0].gather_rows(&[3, 0, 3, 1, 2])?, &w)
        });
        check("gather_cols", &[a.clone()], |_, v| contract(v[0].gather_cols(&[2, 2])?, &w42));
        check("slice_rows", &[a.clone()], |_, v| contract(v[0].slice_rows(1..3)?, &w23));
        check("slice_cols", &[a.clone()], |_, v| contract(v[0].slice_cols(1..3)?, &w42));
        check("sum", &[a.clone()], |_, v| Ok(v[0].sum()));
        check("mean", &[a.clone()], |_, v| Ok(v[0].mean().scale(3.0)));
        let sq = normal_matrix(&mut r, 4, 4);
        let w41 = normal_matrix(&mut r, 4, 1);
        check("diag", &[sq], |_, v| contract(v[0].diag()?, &w41));
    }
}

pub fn elementwise_ops() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let x = away_from_zero(normal_matrix(&mut r, 3, 3));
        let p = positive(&mut r, 3, 3);
        let w = normal_matrix(&mut r, 3, 3);
        let u = DenseMatrix::from_fn(3, 3, |_, _| r.random_range(0.05..0.95));
        check("relu", &[x.clone()], |_, v| contract(v[0].relu(), &w));
        check("tanh", &[x.clone()], |_, v| contract(v[0].tanh(), &w));
        check("softplus", &[x.clone()], |_, v| contract(v[0].softplus(), &w));
        check("exp", &[x.clone()], |_, v| contract(v[0].exp(), &w));
        check("square", &[x.clone()], |_, v| contract(v[0].square(), &w));
        check("recip", &[x.clone()], |_, v| contract(v[0].recip(), &w));
        check("ln", &[p.clone()], |_, v| contract(v[0].ln(), &w));
        check("sqrt", &[p.clone()], |_, v| contract(v[0].sqrt(), &w));
        check("clamp", &[x.clone()], |_, v| {
            // Bounds sit strictly between entries, away from any of them.
            contract(v[0].clamp(-0.05, 0.05).add(&v[0])?, &w)
        });
        check("normal_cdf", &[x.clone()], |_, v| contract(v[0].normal_cdf(), &w));
        check("normal_quantile", &[u], |_, v| contract(v[0].normal_quantile()?, &w));
    }
}

pub fn spd_ops() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let n = 2 + (seed as usize % 4);
        let a = spd(&mut r, n);
        let w = normal_matrix(&mut r, n, n);
        check("logdet_spd", &[a.clone()], |_, v| v[0].logdet_spd());
        check("inverse_spd", &[a.clone()], |_, v| contract(v[0].inverse_spd()?, &w));
        let idx: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let wb = normal_matrix(&mut r, idx.len(), idx.len());
        check("inverse_spd_block", &[a.clone()], |_, v| contract(v[0].inverse_spd_block(&idx)?, &wb));
    }
}

pub fn sum_of_inverse_on_4x4() {
    for seed in 0..TRIALS {
        let a = spd(&mut rng(seed), 4);
        check("sum(inverse)", &[a], |_, v| Ok(v[0].inverse_spd()?.sum()));
    }
}

pub fn graph_and_count_ops() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let g = connected_graph(&mut r, 6, 4);
        let edges = Arc::new(g.edges().to_vec());
        let wts = positive(&mut r, edges.len(), 1);
        let w = normal_matrix(&mut r, 6, 6);
        check("weighted_laplacian", &[wts], |_, v| contract(v[0].weighted_laplacian(6, Arc::clone(&edges))?, &w));

        let rates = positive(&mut r, 5, 1);
        let counts: Vec<u64> = (0..5).map(|_| r.random_range(0..6)).collect();
        let w5 = normal_matrix(&mut r, 5, 1);
        check("poisson_midpoint", &[rates], |_, v| contract(v[0].poisson_midpoint(&counts)?, &w5));
    }
}

pub fn two_layer_composition() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, 5, 3);
        let w0 = normal_matrix(&mut r, 3, 4);
        let w1 = normal_matrix(&mut r, 4, 1);
        check("mlp", &[x, w0, w1], |_, v| Ok(v[0].matmul(&v[1])?.tanh().matmul(&v[2])?.square().sum()));
    }
}

/// Central differences of `model.loss` over every parameter scalar. Returns
/// `(checked, skipped)`: coordinates within a step of a ReLU kink are skipped.
pub fn check_model(model: &Model, ctx: &GraphContext, obs: &[usize], y: &[f64], params: &ParamSet) -> (usize, usize) {
    let name = model.variant.name();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = model.loss(&tape, &bound, ctx, obs, y).unwrap();
    let grads = bound.gradients(&tape.backward(loss).unwrap());
    let eval = |p: &ParamSet| {
        let t = Tape::new();
        let b = p.bind(&t);
        model.loss(&t, &b, ctx, obs, y).unwrap().item()
    };
    let (mut checked, mut skipped) = (0, 0);
    let mut p = params.clone();
    let names: Vec<String> = params.iter().map(|(k, _)| k.to_string()).collect();
    for key in names {
        let len = params.get(&key).unwrap().data().len();
        for e in 0..len {
            let orig = params.get(&key).unwrap().data()[e];
            let mut central = |h: f64| {
                p.get_mut(&key).unwrap().data_mut()[e] = orig + h;
                let hi = eval(&p);
                p.get_mut(&key).unwrap().data_mut()[e] = orig - h;
                let lo = eval(&p);
                p.get_mut(&key).unwrap().data_mut()[e] = orig;
                (hi - lo) / (2.0 * h)
            };
            let (wide, numeric) = (central(STEP), central(STEP / 2.0));
            // A ReLU kink inside the step shows up as disagreement between the
            // two widths, which bounds the error of the narrow one by 4x.
            if rel_err(wide, numeric) > TOL / 4.0 {
                skipped += 1;
                continue;
            }
            checked += 1;
            let a = grads.get(&key).unwrap().data()[e];
            assert!(
                rel_err(a, numeric) <= TOL,
                "{name}: {key}[{e}] analytic {a} vs numeric {numeric}"
            );
        }
    }
    (checked, skipped)
}

pub fn full_losses_for_every_variant() {
    let families = [Family::Normal, Family::Poisson];
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let n = 9;
        let g = connected_graph(&mut r, n, 6);
        let x = normal_matrix(&mut r, n, 3);
        let ctx = GraphContext::new(g, x).unwrap();
        let obs = [0, 2, 3, 5, 6, 8];
        let y_normal: Vec<f64> = obs.iter().map(|_| r.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = obs.iter().map(|_| r.random_range(0.2..0.8)).collect();
        for family in families {
            for base in [NetKind::Mlp, NetKind::Gcn, NetKind::Sage] {
                for coupling in Coupling::ALL {
                    let model = Model::new(ModelVariant::new(base, coupling, family), 3).unwrap();
                    // Move two-parameter couplings away from their initial symmetric point.
                    let params = perturbed(&model.init(seed), &mut r, 0.3);
                    let y = match family {
                        Family::Normal => y_normal.clone(),
                        // Counts at central quantiles of each node's rate: labels deep in
                        // a tail put u next to 0 or 1, where Φ⁻¹ turns one ulp of u into
                        // more rounding noise than a 1e-5 step can resolve.
                        Family::Poisson => {
                            let tape = Tape::new();
                            let loc = model.location(&tape, &params.bind(&tape), &ctx).unwrap();
                            let loc = loc.value().clone();
                            obs.iter()
                                .zip(&u)
                                .map(|(&i, &ui)| poisson_quantile(loc[(i, 0)].exp(), ui).unwrap() as f64)
                                .collect()
                        }
                    };
                    let (c, s) = check_model(&model, &ctx, &obs, &y, &params);
                    checked += c;
                    skipped += s;
                }
            }
        }
    }
    assert!(skipped * 1000 <= checked, "{skipped} kinks in {checked} coordinates");
}

pub fn alpha_beta_parameters_on_ten_nodes() {
    for seed in 0..TRIALS {
        let mut r = rng(seed);
        let g = connected_graph(&mut r, 10, 8);
        let sym = g.sym_normalized_adjacency();
        let a = DenseMatrix::scalar(r.random_range(-1.5..1.5));
        let b = DenseMatrix::scalar(r.random_range(-1.0..1.5));
        let loc = normal_matrix(&mut r, 10, 1);
        let obs: Vec<usize> = (0..10).filter(|i| i % 3 != 1).collect();
        let y: Vec<f64> = obs.iter().map(|_| r.random_range(-2.0..2.0)).collect();
        check("alpha-beta nll", &[a, b], |t, v| {
            let s = t.constant(sym.clone());
            let alpha = v[0].tanh().scale(copulagraph::copula::ALPHA_BOUND);
            let beta = v[1].softplus();
            let k = t.constant(DenseMatrix::identity(10)).sub(&s.scale_by(&alpha)?)?.scale_by(&beta)?;
            Ok(nll_loss(t.constant(loc.clone()), k, Family::Normal, &obs, &y)?.loss)
        });
    }
}

pub fn backward_is_deterministic() {
    let model = Model::new(ModelVariant::new(NetKind::Gcn, Coupling::Regression, Family::Normal), 3).unwrap();
    let mut r = rng(4);
    let g = connected_graph(&mut r, 12, 10);
    let ctx = GraphContext::new(g, normal_matrix(&mut r, 12, 3)).unwrap();
    let obs = [0, 1, 4, 7, 9];
    let y = [0.3, -1.0, 2.2, 0.1, 0.5];
    let params = model.init(1);
    let grads = || {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loss = model.loss(&tape, &bound, &ctx, &obs, &y).unwrap();
        bound.gradients(&tape.backward(loss).unwrap())
    };
    let (a, b) = (grads(), grads());
    for ((ka, va), (kb, vb)) in a.iter().zip(b.iter()) {
        assert_eq!(ka, kb);
        let bits = |m: &DenseMatrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(va), bits(vb), "{ka}");
    }
}
