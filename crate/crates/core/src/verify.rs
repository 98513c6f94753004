//! Self-checks of the analytic gradients and closed forms against numeric
//! differentiation and brute-force oracles, runnable from the command line.
//!
//! With `inject_bug` set each suite perturbs the library value it checks, so
//! a healthy harness reports every suite as failed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{j1_loss_and_grad, j1_pairwise, label_affinity, LabelAffinity};
use crate::dataset::{LabelMatrix, Modality};
use crate::diffkernel::{relative_error, Matrix};
use crate::error::Result;
use crate::hashlearn::{grad_meta_x, grad_meta_y, loss2, update_b, HashCodes};
use crate::hsic::{hsic_grad_with_bandwidth, hsic_value, mean_sq_distance_bandwidth, rbf_kernel};
use crate::icae::{encode_masked, loss1, reconstruction_loss, AeHyper, IcaeParams, LabelAffinities};
use crate::meta::{side_backward, side_forward, SideNets, Variant};
use crate::retrieval::mean_average_precision;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    /// Largest observed error (relative for gradients, absolute otherwise).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let finite = errors.iter().all(|e| e.is_finite());
        SuiteReport {
            name: name.into(),
            instances: errors.len(),
            worst,
            tolerance,
            passed: finite && worst <= tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub inject_bug: bool,
}

pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-10;

pub fn run_all(opts: VerifyOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        loss1_gradient(opts, 20)?,
        loss2_gradient(opts, 20)?,
        meta_gradient(opts, 20)?,
        hsic_oracle(opts, 50)?,
        j1_dual_form(opts, 50)?,
        sign_update(opts, 100)?,
        map_oracle(opts, 100)?,
    ])
}

fn rng(opts: VerifyOptions, suite: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(1_000_003).wrapping_add(suite))
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Every sample gets one or two labels and every label appears.
fn random_labels(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<LabelMatrix> {
    let lists: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let first = if i < c { i } else { rng.gen_range(0..c) };
            let mut l = vec![first];
            if rng.gen_bool(0.3) {
                let second = rng.gen_range(0..c);
                if second != first {
                    l.push(second);
                }
            }
            l
        })
        .collect();
    LabelMatrix::from_lists(c, &lists)
}

fn central_diff(point: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut v = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        v[i] = point[i] + eps;
        let up = f(&v)?;
        v[i] = point[i] - eps;
        let down = f(&v)?;
        v[i] = point[i];
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

fn corrupt(values: &mut [f64], inject: bool) {
    if inject {
        if let Some(v) = values.first_mut() {
            *v = *v * 1.5 + 0.1;
        }
    }
}

/// Autoencoder objective with frozen kernel bandwidths and all labels present.
pub fn loss1_gradient(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 1);
    let mut errors = Vec::new();
    for t in 0..instances {
        let k = rng.gen_range(2..=4);
        let c = rng.gen_range(2..=3);
        let n = rng.gen_range(c.max(3)..=6);
        let (dx, dy) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let hyper = AeHyper {
            alpha: rng.gen_range(0.05..1.0),
            beta: rng.gen_range(0.05..1.0),
        };
        let params = IcaeParams::new(dx, dy, k, hyper, rng.gen())?;
        let fx = uniform(dx, n, &mut rng);
        let fy = uniform(dy, n, &mut rng);
        let labels = random_labels(n, c, &mut rng)?;
        let aff = LabelAffinities {
            x: label_affinity(&fx.transpose(), &labels)?,
            y: label_affinity(&fy.transpose(), &labels)?,
        };
        let drop = [None, Some(Modality::Image), Some(Modality::Text)][t % 3];
        let out = loss1(&params, &fx, &fy, &labels, &aff, drop)?;
        let codes = encode_masked(&params, &fx, &fy, drop)?;
        let (sx, sy) = (mean_sq_distance_bandwidth(&codes.px), mean_sq_distance_bandwidth(&codes.py));
        let mut probe = params.clone();
        let numeric = central_diff(&params.to_flat(), 1e-6, |v| {
            probe.set_flat(v)?;
            let c = encode_masked(&probe, &fx, &fy, drop)?;
            let protos = prototypes_by_loop(&c.cstar, &labels);
            let j1 = j1_pairwise(&protos, &aff.x, &aff.y)?;
            let j2 = hsic_grad_with_bandwidth(&c.px, &c.py, sx, sy)?.value;
            let (j3, _) = reconstruction_loss(&probe, &fx, &fy, &c)?;
            Ok(hyper.alpha * j1 + hyper.beta * j2 + j3)
        })?;
        let mut analytic = out.grads.to_flat();
        corrupt(&mut analytic, opts.inject_bug);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(SuiteReport::new("loss1-gradient", &errors, GRAD_TOL))
}

fn prototypes_by_loop(codes: &Matrix, labels: &LabelMatrix) -> Matrix {
    let (k, c) = (codes.rows(), labels.num_labels());
    let mut out = Matrix::zeros(k, c);
    for a in 0..c {
        let members: Vec<usize> = (0..labels.n()).filter(|&i| labels.get(i, a)).collect();
        for r in 0..k {
            out[(r, a)] = members.iter().map(|&i| codes[(r, i)]).sum::<f64>() / members.len() as f64;
        }
    }
    out
}

/// Hash objective w.r.t. both meta-feature matrices, `B` held fixed.
pub fn loss2_gradient(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 2);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let k = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=10);
        let mx = uniform(k, n, &mut rng);
        let my = uniform(k, n, &mut rng);
        let s = Matrix::from_fn(n, n, |_, _| rng.gen_bool(0.5) as u8 as f64);
        let b = HashCodes::from_sign(&uniform(k, n, &mut rng)).to_matrix();
        let (gamma, eta) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let mut analytic = grad_meta_x(&mx, &my, &s, &b, gamma, eta)?.into_vec();
        analytic.extend(grad_meta_y(&mx, &my, &s, &b, gamma, eta)?.into_vec());
        let mut point = mx.as_slice().to_vec();
        point.extend_from_slice(my.as_slice());
        let half = k * n;
        let numeric = central_diff(&point, 1e-6, |v| {
            let a = Matrix::from_vec(k, n, v[..half].to_vec())?;
            let c = Matrix::from_vec(k, n, v[half..].to_vec())?;
            loss2(&a, &c, &s, &b, gamma, eta)
        })?;
        corrupt(&mut analytic, opts.inject_bug);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(SuiteReport::new("loss2-gradient", &errors, GRAD_TOL))
}

/// Backward pass of the meta-feature fusion (projector, both selectors)
/// against differences of a random linear functional of `M`.
pub fn meta_gradient(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 3);
    let mut errors = Vec::new();
    for t in 0..instances {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=5);
        let hidden = if t % 2 == 0 { None } else { Some(rng.gen_range(2..=6)) };
        let mut nets = SideNets::new(d, k, hidden, &mut rng)?;
        // Fresh selectors are zero; randomize them so every path is exercised.
        let mut flat = nets.to_flat();
        for v in flat.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        nets.set_flat(&flat)?;
        let raw = uniform(d, n, &mut rng);
        let cstar = uniform(k, n, &mut rng);
        let p = uniform(k, n, &mut rng);
        let upstream = uniform(k, n, &mut rng);
        let terms = Variant::ALL[t % Variant::ALL.len()].terms(Modality::Image);
        let (_, cache) = side_forward(&nets, &raw, &cstar, &p, terms)?;
        let mut analytic = side_backward(&nets, &cache, &upstream)?.to_flat();
        let mut probe = nets.clone();
        let numeric = central_diff(&flat, 1e-6, |v| {
            probe.set_flat(v)?;
            let (m, _) = side_forward(&probe, &raw, &cstar, &p, terms)?;
            Ok(m.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum())
        })?;
        corrupt(&mut analytic, opts.inject_bug);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(SuiteReport::new("meta-gradient", &errors, GRAD_TOL))
}

/// `HSIC = (n−1)^(−2) Σ_ij Kx_ij · (Ky_ij − mean_i − mean_j + mean)` by explicit loops.
pub fn hsic_oracle(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 4);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let n = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=5);
        let px = uniform(k, n, &mut rng);
        let py = uniform(k, n, &mut rng);
        let kx = rbf_kernel(&px, rng.gen_range(0.2..3.0))?.k;
        let ky = rbf_kernel(&py, rng.gen_range(0.2..3.0))?.k;
        let mut got = hsic_value(&kx, &ky)?;
        if opts.inject_bug {
            got += 1e-6;
        }
        let nf = n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut centered = ky[(i, j)];
                for l in 0..n {
                    centered -= ky[(l, j)] / nf + ky[(i, l)] / nf;
                    for m in 0..n {
                        centered += ky[(l, m)] / (nf * nf);
                    }
                }
                total += kx[(i, j)] * centered;
            }
        }
        let want = total / ((n - 1) * (n - 1)) as f64;
        errors.push((got - want).abs());
    }
    Ok(SuiteReport::new("hsic-oracle", &errors, ORACLE_TOL))
}

fn random_affinity(c: usize, rng: &mut ChaCha8Rng) -> Result<LabelAffinity> {
    let mut h = Matrix::zeros(c, c);
    for a in 0..c {
        for b in 0..a {
            let v = rng.gen_range(0.1..3.0);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    LabelAffinity::from_hausdorff(h)
}

/// Trace form of J1 against the weighted pairwise sum, plus the constant-prototype zero.
pub fn j1_dual_form(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 5);
    let mut errors = Vec::new();
    for t in 0..instances {
        let c = rng.gen_range(2..=7);
        let k = rng.gen_range(1..=6);
        let rx = random_affinity(c, &mut rng)?;
        let ry = random_affinity(c, &mut rng)?;
        let protos = if t % 5 == 0 {
            let col: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Matrix::from_fn(k, c, |r, _| col[r])
        } else {
            uniform(k, c, &mut rng)
        };
        let (mut trace, _) = j1_loss_and_grad(&protos, &rx, &ry)?;
        if opts.inject_bug {
            trace += 1e-6;
        }
        let want = if t % 5 == 0 { 0.0 } else { j1_pairwise(&protos, &rx, &ry)? };
        errors.push((trace - want).abs());
    }
    Ok(SuiteReport::new("j1-dual-form", &errors, ORACLE_TOL))
}

/// The sign update attains the maximum of `tr(B (Mx+My)ᵀ)` over every ±1 matrix.
pub fn sign_update(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 6);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let k = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=(12 / k).min(4));
        let mx = uniform(k, n, &mut rng);
        let my = uniform(k, n, &mut rng);
        let sum = mx.add(&my)?;
        let mut b = update_b(&mx, &my)?.to_matrix();
        if opts.inject_bug {
            b[(0, 0)] = -b[(0, 0)];
        }
        let score = |bm: &[f64]| bm.iter().zip(sum.as_slice()).map(|(x, y)| x * y).sum::<f64>();
        let got = score(b.as_slice());
        let cells = k * n;
        let best = (0u32..1 << cells)
            .map(|mask| {
                let cand: Vec<f64> = (0..cells).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                score(&cand)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        errors.push((best - got).max(0.0));
    }
    Ok(SuiteReport::new("sign-update", &errors, 0.0))
}

/// Hamming-ranked MAP against a sort-then-scan oracle.
pub fn map_oracle(opts: VerifyOptions, instances: usize) -> Result<SuiteReport> {
    let mut rng = rng(opts, 7);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let k = rng.gen_range(1..=8);
        let nb = rng.gen_range(1..=30);
        let nq = rng.gen_range(1..=10);
        let c = rng.gen_range(1..=4);
        let base = HashCodes::from_sign(&uniform(k, nb, &mut rng));
        let query = HashCodes::from_sign(&uniform(k, nq, &mut rng));
        let bl = random_labels(nb, c.min(nb), &mut rng)?;
        let ql = random_labels(nq, c.min(nb), &mut rng)?;
        let oracle = map_by_sorting(&query, &ql, &base, &bl);
        let got = match mean_average_precision(&query, &ql, &base, &bl, None) {
            Ok(r) => Some(r.map + if opts.inject_bug { 1e-3 } else { 0.0 }),
            Err(_) => None,
        };
        errors.push(match (got, oracle) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        });
    }
    Ok(SuiteReport::new("map-oracle", &errors, 0.0))
}

fn map_by_sorting(query: &HashCodes, ql: &LabelMatrix, base: &HashCodes, bl: &LabelMatrix) -> Option<f64> {
    let mut aps = Vec::new();
    for q in 0..query.len() {
        let qc = query.code(q);
        let mut order: Vec<(usize, usize)> = (0..base.len())
            .map(|j| (qc.iter().zip(base.code(j)).filter(|(a, b)| a != b).count(), j))
            .collect();
        order.sort();
        let relevant: Vec<bool> = order.iter().map(|&(_, j)| ql.shares_label(q, bl, j)).collect();
        let total = relevant.iter().filter(|&&r| r).count();
        if total == 0 {
            continue;
        }
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (pos, &r) in relevant.iter().enumerate() {
            if r {
                hits += 1.0;
                sum += hits / (pos + 1) as f64;
            }
        }
        aps.push(sum / total as f64);
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_default_seed() {
        let reports = run_all(VerifyOptions { seed: 0, inject_bug: false }).unwrap();
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
        assert_eq!(reports.len(), 7);
    }

    #[test]
    fn injected_bug_fails_every_suite() {
        let reports = run_all(VerifyOptions { seed: 0, inject_bug: true }).unwrap();
        for r in &reports {
            assert!(!r.passed, "{} passed with an injected bug", r.name);
        }
    }
}
