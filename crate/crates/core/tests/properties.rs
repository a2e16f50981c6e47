//! Randomized invariants across the crate.

mod common;

use common::{connected_graph, normal_matrix, perturbed, random_graph, rng, spd};
use copulagraph::autodiff::Tape;
use copulagraph::copula::{conditional_posterior, correlation_matrix, infer_sample};
use copulagraph::marginals::{
    cdf_grad_lambda, poisson_cdf, poisson_midpoint, poisson_pmf, poisson_quantile, poisson_scan_cap, Marginal,
    MarginalModel,
};
use copulagraph::matrix::Cholesky;
use copulagraph::metrics::{r2, r2_deviance};
use copulagraph::model::{Coupling, GraphContext, Model, ModelVariant};
use copulagraph::marginals::Family;
use copulagraph::nets::NetKind;
use copulagraph::synth::{generate, split, Setting, SynthConfig};
use copulagraph::trainer::{adam_step, AdamState};
use copulagraph::{DenseMatrix, Graph};
use proptest::prelude::*;
use rand::Rng;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig::with_cases(n)
}

fn synth_graph(seed: u64, n: usize, s: usize) -> Graph {
    let cfg = SynthConfig {
        n,
        s,
        d0: 3,
        seed,
        ..Default::default()
    };
    generate(&cfg).unwrap().graph
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn graph_operators(seed in any::<u64>(), n in 2usize..15, p in 0.0f64..0.8) {
        let mut r = rng(seed);
        for g in [random_graph(&mut r, n, p), synth_graph(seed, n, n * (n - 1) / 4)] {
            let l = g.laplacian();
            for i in 0..n {
                prop_assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
            }
            prop_assert!(l.is_symmetric(0.0));
            prop_assert!(g.sym_normalized_adjacency().is_symmetric(0.0));
            let m = g.mean_aggregation_operator();
            for i in 0..n {
                prop_assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(m.row(i).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn logdet_of_inverse_cancels(seed in any::<u64>(), n in 1usize..12) {
        let a = spd(&mut rng(seed), n);
        let tape = Tape::new();
        let v = tape.constant(a);
        let total = v.logdet_spd().unwrap().item() + v.inverse_spd().unwrap().logdet_spd().unwrap().item();
        prop_assert!(total.abs() <= 1e-8, "{total}");
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn normal_quantile_inverts_cdf(mean in -10.0f64..10.0, sd in 0.1f64..3.0, t in -6.0f64..5.0) {
        let m = Marginal::normal(mean, sd * sd).unwrap();
        let y = mean + sd * t;
        let back = m.quantile(m.cdf(y)).unwrap();
        prop_assert!((back - y).abs() <= 1e-8, "{y} -> {back}");
    }

    #[test]
    fn poisson_quantile_inverts_cdf(rate in 0.05f64..60.0) {
        for k in 0..=poisson_scan_cap(rate) {
            let f = poisson_cdf(rate, k);
            let below = if k == 0 { 0.0 } else { poisson_cdf(rate, k - 1) };
            // Past this point the mass is below one ulp of the accumulated sum.
            if f >= 1.0 || f == below {
                break;
            }
            prop_assert_eq!(poisson_quantile(rate, f).unwrap(), k);
            prop_assert_eq!(Marginal::poisson(rate).unwrap().quantile(f).unwrap(), k as f64);
        }
    }

    #[test]
    fn cdf_is_monotone_and_midpoints_interleave(rate in 0.05f64..60.0) {
        let m = Marginal::poisson(rate).unwrap();
        let mut prev = 0.0;
        for k in 0..=poisson_scan_cap(rate) {
            let f = m.cdf(k as f64);
            prop_assert!(f >= prev);
            let v = poisson_midpoint(rate, k);
            // A strict interior needs room between the two doubles.
            if f - prev > 4.0 * f64::EPSILON {
                prop_assert!(prev < v && v < f, "k={k}: {prev} {v} {f}");
            }
            prev = f;
        }
    }

    #[test]
    fn normal_cdf_is_monotone(mean in -5.0f64..5.0, sd in 0.1f64..3.0, a in -8.0f64..8.0, b in -8.0f64..8.0) {
        let m = Marginal::normal(mean, sd * sd).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(m.cdf(lo) <= m.cdf(hi));
    }

    #[test]
    fn cdf_rate_derivative_is_minus_pmf(rate in 0.2f64..30.0, k in 0u64..60) {
        let h = 1e-6;
        let fd = (poisson_cdf(rate + h, k) - poisson_cdf(rate - h, k)) / (2.0 * h);
        prop_assert!((fd - cdf_grad_lambda(rate, k)).abs() <= 1e-6, "{fd} vs {}", cdf_grad_lambda(rate, k));
    }

    #[test]
    fn poisson_mass_sums_to_one(rate in 0.05f64..200.0) {
        let m = Marginal::poisson(rate).unwrap();
        let total: f64 = (0..=poisson_scan_cap(rate))
            .map(|k| m.log_density(k as f64).unwrap().exp())
            .sum();
        prop_assert!((total - 1.0).abs() <= 1e-10, "{total}");
        prop_assert!((total - (0..=poisson_scan_cap(rate)).map(|k| poisson_pmf(rate, k)).sum::<f64>()).abs() <= 1e-15);
    }
}

fn copula_model(kind: Coupling, d: usize) -> Model {
    Model::new(ModelVariant::new(NetKind::Gcn, kind, Family::Normal), d).unwrap()
}

fn realize(model: &Model, ctx: &GraphContext, seed: u64, scale: f64) -> DenseMatrix {
    let params = perturbed(&model.init(seed), &mut rng(seed ^ 0x5eed), scale);
    let tape = Tape::new();
    let k = model.precision_matrix(&tape, &params.bind(&tape), ctx).unwrap().unwrap();
    let k = k.value().clone();
    k
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn precision_matrices(seed in any::<u64>(), n in 2usize..14, p in 0.0f64..0.7, scale in 0.0f64..3.0) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p);
        let ctx = GraphContext::new(g.clone(), normal_matrix(&mut r, n, 3)).unwrap();
        for kind in Coupling::ALL.into_iter().filter(|c| *c != Coupling::None) {
            let k = realize(&copula_model(kind, 3), &ctx, seed, scale);
            for i in 0..n {
                for j in 0..n {
                    if i != j && !g.has_edge(i, j) {
                        prop_assert_eq!(k[(i, j)], 0.0, "{:?} at ({}, {})", kind, i, j);
                    }
                }
            }
            prop_assert!(k.is_symmetric(1e-14));
            prop_assert!(Cholesky::new(&k).is_ok(), "{:?} not positive definite", kind);
            if kind == Coupling::Regression {
                let row_sums = k.matvec(&vec![1.0; n]).unwrap();
                for s in row_sums {
                    prop_assert!((s - 1.0).abs() <= 1e-12, "{s}");
                }
            }
        }
    }

    #[test]
    fn conditional_posterior_edge_cases(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let rm = correlation_matrix(&spd(&mut r, n));
        let all: Vec<usize> = (0..n).collect();
        let z: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let full = conditional_posterior(&rm, &z, &all, &[]).unwrap();
        prop_assert_eq!(full.dim(), 0);
        prop_assert_eq!(full.cov.shape(), (0, 0));
        let none = conditional_posterior(&rm, &[], &[], &all).unwrap();
        prop_assert!(none.mean.iter().all(|&m| m == 0.0));
        prop_assert_eq!(none.cov, rm);
    }

    #[test]
    fn infer_sample_is_reproducible(seed in any::<u64>(), n in 3usize..9, poisson in any::<bool>()) {
        let mut r = rng(seed);
        let rm = correlation_matrix(&spd(&mut r, n));
        let marginals = if poisson {
            MarginalModel::poisson(&(0..n).map(|_| r.random_range(0.5..5.0)).collect::<Vec<_>>()).unwrap()
        } else {
            let means: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            MarginalModel::normal(&means, &vec![1.0; n]).unwrap()
        };
        let obs: Vec<usize> = (0..n).step_by(2).collect();
        let miss: Vec<usize> = (1..n).step_by(2).collect();
        let y: Vec<f64> = obs.iter().map(|_| r.random_range(0..4) as f64).collect();
        let a = infer_sample(&rm, &marginals, &y, &obs, &miss, 300, seed).unwrap();
        let b = infer_sample(&rm, &marginals, &y, &obs, &miss, 300, seed).unwrap();
        prop_assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn networks_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..12, p in 0.0f64..0.7) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, p);
        let x = normal_matrix(&mut r, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let mut px = DenseMatrix::zeros(n, 3);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let ctx = GraphContext::new(g.clone(), x).unwrap();
        let pctx = GraphContext::new(g.permute(&perm).unwrap(), px).unwrap();
        for base in [NetKind::Mlp, NetKind::Gcn, NetKind::Sage] {
            let model = Model::new(ModelVariant::new(base, Coupling::None, Family::Normal), 3).unwrap();
            let params = perturbed(&model.init(seed), &mut r, 0.5);
            let out = |c: &GraphContext| {
                let tape = Tape::new();
                let v = model.location(&tape, &params.bind(&tape), c).unwrap();
                let v = v.value().clone().into_vec();
                v
            };
            let (a, b) = (out(&ctx), out(&pctx));
            for i in 0..n {
                let tol = 1e-12 * a[i].abs().max(1.0);
                prop_assert!((a[i] - b[perm[i]]).abs() <= tol, "{:?} node {}: {} vs {}", base, i, a[i], b[perm[i]]);
            }
        }
    }

    #[test]
    fn r2_is_at_most_one(seed in any::<u64>(), n in 2usize..40) {
        let mut r = rng(seed);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let y_hat: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        prop_assert!(r2(&y, &y_hat).unwrap() <= 1.0);
        let counts: Vec<f64> = (0..n).map(|i| (r.random_range(0..8) + i % 2) as f64).collect();
        let rates: Vec<f64> = (0..n).map(|_| r.random_range(0.01..10.0)).collect();
        if let Ok(v) = r2_deviance(&counts, &rates) {
            prop_assert!(v <= 1.0);
        }
    }

    #[test]
    fn adam_first_step_flips_with_gradient_sign(seed in any::<u64>(), lr in 1e-4f64..1.0) {
        let mut r = rng(seed);
        let model = copula_model(Coupling::Regression, 3);
        // From zero the parameters after one step are the update itself.
        let mut start = model.init(seed);
        for (_, m) in start.iter_mut() {
            m.data_mut().fill(0.0);
        }
        let grads = perturbed(&start, &mut r, 2.0);
        let mut neg = grads.clone();
        for (_, m) in neg.iter_mut() {
            for v in m.data_mut() {
                *v = -*v;
            }
        }
        let step = |g| {
            let mut p = start.clone();
            adam_step(&mut p, g, &mut AdamState::new(&start), lr).unwrap();
            p
        };
        let (up, down) = (step(&grads), step(&neg));
        for (name, u) in up.iter() {
            let d = down.get(name).unwrap();
            for (u, d) in u.data().iter().zip(d.data()) {
                prop_assert_eq!(u.to_bits(), (-d).to_bits());
            }
        }
    }

    #[test]
    fn splits_partition_the_nodes(seed in any::<u64>(), n in 6usize..200, a in 0.1f64..0.6) {
        let ratios = [a, (1.0 - a) / 2.0, (1.0 - a) / 2.0];
        let s = split(n, ratios, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split(n, ratios, seed).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(cases(20))]

    #[test]
    fn synth_is_deterministic(seed in any::<u64>(), setting in prop_oneof![Just(Setting::A), Just(Setting::B), Just(Setting::C)]) {
        let cfg = SynthConfig { n: 40, s: 150, d0: 4, setting, seed, ..Default::default() };
        let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
        prop_assert_eq!(&a.graph, &b.graph);
        prop_assert_eq!(&a.features, &b.features);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.labels), bits(&b.labels));
        prop_assert_eq!(a.graph.edge_count(), 150);
        if setting == Setting::B {
            prop_assert_eq!(bits(&a.mean), bits(&a.features.matvec(&a.label_weights).unwrap()));
        }
    }

    #[test]
    fn plain_normal_loss_is_mse(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 12;
        let ctx = GraphContext::new(connected_graph(&mut r, n, 5), normal_matrix(&mut r, n, 3)).unwrap();
        let model = copula_model(Coupling::None, 3);
        let params = perturbed(&model.init(seed), &mut r, 0.3);
        let obs = [0, 3, 4, 7, 10];
        let y: Vec<f64> = obs.iter().map(|_| r.random_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loss = model.loss(&tape, &bound, &ctx, &obs, &y).unwrap().item();
        let loc = model.location(&tape, &bound, &ctx).unwrap().value().clone();
        let sq: Vec<f64> = obs.iter().zip(&y).map(|(&i, v)| (loc[(i, 0)] - v).powi(2)).collect();
        let mse = sq.iter().sum::<f64>() / sq.len() as f64;
        prop_assert!((loss - mse).abs() <= 1e-12 * mse.max(1.0));
        // Mean unit-variance Gaussian NLL is an affine function of the same loss.
        let nll: f64 = obs
            .iter()
            .zip(&y)
            .map(|(&i, v)| -Marginal::normal(loc[(i, 0)], 1.0).unwrap().log_density(*v).unwrap())
            .sum::<f64>()
            / obs.len() as f64;
        let affine = 0.5 * loss + 0.5 * (2.0 * std::f64::consts::PI).ln();
        prop_assert!((nll - affine).abs() <= 1e-12 * nll.abs().max(1.0));
    }
}
