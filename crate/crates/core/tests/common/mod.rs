//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use std::f64::consts::PI;

use aklab::autodiff::{Layer, Mlp};
use aklab::gp::{GprModel, NormStats};
use aklab::kernels::{
    akgpr_covariance, AttentionMatrices, AttentiveKernel, GibbsKernel, Kernel, KernelConfig, KernelRegistry,
    RbfKernel, VariantKind,
};
use aklab::linalg::DenseMatrix;
use aklab::rng::SeededRng;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Gauss–Jordan inverse with partial pivoting, plus the log-determinant.
pub fn gauss_jordan(a: &DenseMatrix) -> (DenseMatrix, f64) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let pivot = m[c][c];
        assert!(pivot != 0.0, "singular matrix");
        log_det += pivot.abs().ln();
        for v in m[c].iter_mut() {
            *v /= pivot;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    let inv = DenseMatrix::from_fn(n, n, |i, j| m[i][n + j]);
    (inv, log_det)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k][p], m[k][q]);
                    m[k][p] = c * akp - s * akq;
                    m[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * apk - s * aqk;
                    m[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

pub fn random_points(rng: &mut SeededRng, n: usize, spread: f64) -> DenseMatrix {
    DenseMatrix::from_fn(n, 2, |_, _| rng.uniform_range(-spread, spread))
}

pub fn all_kernels(seed: u64) -> Vec<Box<dyn Kernel>> {
    let reg = KernelRegistry::default();
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for name in ["rbf", "ak", "gibbs", "dkl"] {
        let cfg = KernelConfig {
            name: name.into(),
            num_bases: 4,
            hidden: 6,
            ..KernelConfig::default()
        };
        out.push(reg.build(&cfg, 2, &mut rng).unwrap());
    }
    for variant in [VariantKind::WeightOnly, VariantKind::MaskOnly, VariantKind::TwoNets] {
        let cfg = KernelConfig {
            variant,
            num_bases: 3,
            hidden: 5,
            ..KernelConfig::default()
        };
        out.push(reg.build(&cfg, 2, &mut rng).unwrap());
    }
    out
}

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

fn instance(cfg: &KernelConfig, seed: u64) -> GprModel {
    let mut rng = SeededRng::new(seed);
    let kernel = KernelRegistry::default().build(cfg, 2, &mut rng).unwrap();
    let mut model = GprModel::new(kernel, 0.3, NormStats::identity(2));
    let x = DenseMatrix::from_fn(8, 2, |_, _| rng.uniform_range(-0.6, 0.6));
    let y = rng.standard_normal(8);
    model.add_normalized(&x, &y).unwrap();
    model
}

fn loss_at(model: &mut GprModel, hyper: &[f64], net: &[f64]) -> f64 {
    model.set_params(hyper, net).unwrap();
    model.loss_and_gradient().unwrap().loss
}

/// Returns the worst `(index, analytic, numeric)` mismatch, if any.
pub fn gradient_mismatch(cfg: &KernelConfig, seed: u64) -> Option<(String, f64, f64)> {
    let mut model = instance(cfg, seed);
    let grad = model.loss_and_gradient().unwrap();
    let (hyper, net) = model.params();
    assert_eq!(grad.hyper.len(), hyper.len());
    assert_eq!(grad.net.len(), net.len());

    let mut worst: Option<(String, f64, f64, f64)> = None;
    let mut consider = |name: String, analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if err > ABS_FLOOR && err > REL_TOL * scale {
            let rel = err / scale;
            if worst.as_ref().is_none_or(|w| rel > w.3) {
                worst = Some((name, analytic, numeric, rel));
            }
        }
    };
    for i in 0..hyper.len() {
        let mut p = hyper.clone();
        p[i] += STEP;
        let up = loss_at(&mut model, &p, &net);
        p[i] -= 2.0 * STEP;
        let down = loss_at(&mut model, &p, &net);
        consider(format!("hyper[{i}]"), grad.hyper[i], (up - down) / (2.0 * STEP));
    }
    for i in 0..net.len() {
        let mut p = net.clone();
        p[i] += STEP;
        let up = loss_at(&mut model, &hyper, &p);
        p[i] -= 2.0 * STEP;
        let down = loss_at(&mut model, &hyper, &p);
        consider(format!("net[{i}]"), grad.net[i], (up - down) / (2.0 * STEP));
    }
    worst.map(|(n, a, b, _)| (n, a, b))
}

/// Network whose output is the constant `softplus⁻¹(c − floor)`, so a Gibbs
/// kernel built on it has length-scale `c` everywhere.
pub fn constant_lengthscale_net(c: f64, floor: f64) -> Mlp {
    let zero = |o: usize, i: usize| Layer {
        weights: DenseMatrix::zeros(o, i),
        bias: vec![0.0; o],
    };
    let mut last = zero(1, 3);
    last.bias[0] = (c - floor).exp_m1().ln();
    Mlp::from_layers(vec![zero(3, 2), zero(3, 3), last]).unwrap()
}

/// Weighted-sum generative covariance against the unnormalized kernel.
pub fn check_weighted_sum_model() -> Check {
    let mut rng = SeededRng::new(11);
    for instance in 0..20 {
        let n = 2 + (rng.next_u64() % 7) as usize;
        let m = 2 + (rng.next_u64() % 3) as usize;
        let cfg = KernelConfig {
            num_bases: m,
            hidden: 4,
            lmin: 0.05,
            lmax: 0.8,
            ..KernelConfig::default()
        };
        let k = KernelRegistry::default().build(&cfg, 2, &mut rng).unwrap();
        let ak = AttentiveKernel::from_spec(&k.spec()).unwrap();
        let x = random_points(&mut rng, n, 1.0);
        let att = ak.softmax_attention(&x).unwrap();
        let generative = akgpr_covariance(&att.w, &att.z, &x, ak.lengthscales()).unwrap();
        let direct = ak.unnormalized_matrix(&x, &x).unwrap();
        let diff = generative.max_abs_diff(&direct);
        ensure(diff < 1e-12, || format!("instance {instance} (N={n}, M={m}): diff {diff:e}"))?;
    }
    Ok(())
}

/// Posterior and evidence against an explicit inverse and the Gaussian density.
pub fn check_gpr_oracle() -> Check {
    for seed in 0..3 {
        for kernel in all_kernels(seed) {
            let name = kernel.name();
            let mut rng = SeededRng::new(100 + seed);
            let n = 4 + 2 * seed as usize;
            let x = random_points(&mut rng, n, 0.7);
            let y = rng.standard_normal(n);
            let xq = random_points(&mut rng, 5, 0.9);
            let noise = 0.4;

            let mut ky = kernel.matrix(&x, &x).unwrap();
            ky.add_diagonal(noise * noise);
            let (inv, log_det) = gauss_jordan(&ky);
            let alpha = inv.matvec(&y).unwrap();
            let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let lml = -0.5 * (quad + log_det + n as f64 * (2.0 * PI).ln());
            let cross = kernel.matrix(&xq, &x).unwrap();
            let mean = cross.matvec(&alpha).unwrap();
            let prior = kernel.matrix(&xq, &xq).unwrap();
            let proj = cross.matmul(&inv).unwrap().matmul(&cross.transpose()).unwrap();

            let mut model = GprModel::new(kernel.clone(), noise, NormStats::identity(2));
            model.add_normalized(&x, &y).unwrap();
            let pred = model.predict_normalized(&xq).unwrap();
            let got = model.log_marginal_likelihood().unwrap();
            ensure((got - lml).abs() < 1e-8, || format!("{name}: lml {got} vs {lml}"))?;
            for q in 0..5 {
                let var = prior[(q, q)] - proj[(q, q)];
                ensure((pred.mean[q] - mean[q]).abs() < 1e-8, || {
                    format!("{name}: mean[{q}] {} vs {}", pred.mean[q], mean[q])
                })?;
                ensure((pred.var[q] - var).abs() < 1e-8, || {
                    format!("{name}: var[{q}] {} vs {var}", pred.var[q])
                })?;
            }
            let loss = model.loss_and_gradient().unwrap().loss;
            ensure((loss + lml).abs() < 1e-8, || format!("{name}: loss {loss} vs {}", -lml))?;
        }
    }
    Ok(())
}

pub fn check_all_gradients() -> Check {
    let named = |name: &str| KernelConfig {
        name: name.into(),
        num_bases: 4,
        hidden: 5,
        ..KernelConfig::default()
    };
    let mut configs = vec![named("rbf"), named("gibbs"), named("dkl")];
    for variant in VariantKind::ALL {
        configs.push(KernelConfig {
            variant,
            ..named("ak")
        });
    }
    for cfg in &configs {
        for seed in 0..3 {
            if let Some((idx, a, n)) = gradient_mismatch(cfg, seed) {
                return Err(format!(
                    "{} {} seed {seed}: {idx} analytic {a:e} vs numeric {n:e}",
                    cfg.name,
                    cfg.variant.label()
                ));
            }
        }
    }
    Ok(())
}

pub fn check_symmetric_psd() -> Check {
    for seed in 0..4 {
        for kernel in all_kernels(seed) {
            let name = kernel.name();
            let mut rng = SeededRng::new(seed + 50);
            let x = random_points(&mut rng, 12, 0.8);
            let k = kernel.matrix(&x, &x).unwrap();
            ensure(k.is_symmetric(1e-12), || format!("{name}: not symmetric"))?;
            let min = jacobi_eigenvalues(&k).into_iter().fold(f64::INFINITY, f64::min);
            ensure(min >= -1e-9, || format!("{name}: min eigenvalue {min:e}"))?;
        }
    }
    Ok(())
}

pub fn check_attentive_diagonal_and_bound() -> Check {
    for seed in 0..5 {
        for variant in VariantKind::ALL {
            let cfg = KernelConfig {
                amplitude: 1.7,
                variant,
                ..KernelConfig::default()
            };
            let k = KernelRegistry::default()
                .build(&cfg, 2, &mut SeededRng::new(seed))
                .unwrap();
            let x = random_points(&mut SeededRng::new(seed + 7), 10, 1.0);
            let m = k.matrix(&x, &x).unwrap();
            for i in 0..10 {
                ensure((m[(i, i)] - 1.7).abs() < 1e-12, || {
                    format!("{}: diagonal {} != 1.7", variant.label(), m[(i, i)])
                })?;
                for j in 0..10 {
                    ensure(m[(i, j)].abs() <= 1.7 + 1e-12, || {
                        format!("{}: |k| = {} exceeds 1.7", variant.label(), m[(i, j)])
                    })?;
                }
            }
        }
    }
    Ok(())
}

pub fn check_gibbs_constant_is_rbf() -> Check {
    let floor = 1e-4;
    for &l in &[0.05, 0.3, 1.2] {
        let gibbs = GibbsKernel::new(0.8, constant_lengthscale_net(l, floor), floor).unwrap();
        let rbf = RbfKernel::new(l, 0.8);
        let mut rng = SeededRng::new(3);
        let x = random_points(&mut rng, 9, 1.0);
        let x2 = random_points(&mut rng, 4, 1.0);
        let d = gibbs.matrix(&x, &x2).unwrap().max_abs_diff(&rbf.matrix(&x, &x2).unwrap());
        ensure(d < 1e-12, || format!("length-scale {l}: diff {d:e}"))?;
    }
    Ok(())
}

pub fn check_orthogonal_masking() -> Check {
    let k = KernelRegistry::default()
        .build(&KernelConfig::default(), 2, &mut SeededRng::new(0))
        .unwrap();
    let ak = AttentiveKernel::from_spec(&k.spec()).unwrap();
    let m = ak.num_bases();
    let x = DenseMatrix::from_rows(&[[0.1, 0.1], [0.1, 0.1001]]).unwrap();
    let w = DenseMatrix::from_fn(2, m, |_, _| 1.0 / (m as f64).sqrt());
    let z = DenseMatrix::from_fn(2, m, |i, j| if j == 2 * i { 1.0 } else { 0.0 });
    let att = AttentionMatrices { w, z };
    let v = ak.matrix_from_attention(&att, &x, &att, &x).unwrap();
    ensure(v[(0, 1)] == 0.0 && v[(1, 0)] == 0.0, || format!("masked value {}", v[(0, 1)]))
}

pub fn check_kernel_laws() -> Check {
    check_symmetric_psd()?;
    check_attentive_diagonal_and_bound()?;
    check_gibbs_constant_is_rbf()?;
    check_orthogonal_masking()
}

/// Fixed hyper-parameters: adding data never raises the posterior variance.
pub fn check_variance_monotone() -> Check {
    for kernel in all_kernels(9) {
        let name = kernel.name();
        let mut rng = SeededRng::new(21);
        let xq = random_points(&mut rng, 30, 1.0);
        let mut model = GprModel::new(kernel.clone(), 0.2, NormStats::identity(2));
        let mut previous = model.predict_normalized(&xq).unwrap().var;
        let prior = kernel.diagonal(&xq).unwrap();
        for round in 0..6 {
            let x = random_points(&mut rng, 2, 1.0);
            model.add_normalized(&x, &rng.standard_normal(2)).unwrap();
            let var = model.predict_normalized(&xq).unwrap().var;
            for q in 0..30 {
                ensure(var[q] <= prior[q] + 1e-8, || format!("{name}: var {} above prior {}", var[q], prior[q]))?;
                ensure(var[q] <= previous[q] + 1e-8, || {
                    format!("{name} round {round}: var rose {} -> {}", previous[q], var[q])
                })?;
            }
            previous = var;
        }
    }
    Ok(())
}
