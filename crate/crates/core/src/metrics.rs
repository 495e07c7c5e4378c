//! Evaluation suite: per-class DSC, HD95, chamber volume curves,
//! cycle-DSC, volume Fréchet distance (vFID), and the paired t-test.

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ShapeSequence, CLASS_LA, CLASS_LV, CLASS_RA, CLASS_RV};
use crate::linalg::{jacobi_eigen, sym_sqrt, SymMatrix};

/// Chambers entering the volume curve, LVM excluded.
pub const VOLUME_CHAMBERS: [u8; 4] = [CLASS_LV, CLASS_RV, CLASS_LA, CLASS_RA];

/// Dice coefficient of one class. Both-empty masks score 1.
pub fn dsc(a: &LabelGrid, b: &LabelGrid, class: u8) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dim(
            format!("{:?}", a.dims),
            format!("{:?}", b.dims),
            "dsc",
        ));
    }
    let mut na = 0usize;
    let mut nb = 0usize;
    let mut inter = 0usize;
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        let ia = la == class;
        let ib = lb == class;
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Surface voxels of a class mask: mask voxels with a 6-neighbor outside
/// the mask (grid boundary counts as outside).
pub fn surface_voxels(grid: &LabelGrid, class: u8) -> Vec<[i64; 3]> {
    let (nx, ny, nz) = grid.dims;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if grid.get(x, y, z) != class {
                    continue;
                }
                let mut boundary = false;
                let coords = [
                    (x as i64 - 1, y as i64, z as i64),
                    (x as i64 + 1, y as i64, z as i64),
                    (x as i64, y as i64 - 1, z as i64),
                    (x as i64, y as i64 + 1, z as i64),
                    (x as i64, y as i64, z as i64 - 1),
                    (x as i64, y as i64, z as i64 + 1),
                ];
                for (cx, cy, cz) in coords {
                    if cx < 0
                        || cy < 0
                        || cz < 0
                        || cx >= nx as i64
                        || cy >= ny as i64
                        || cz >= nz as i64
                        || grid.get(cx as usize, cy as usize, cz as usize) != class
                    {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    out.push([x as i64, y as i64, z as i64]);
                }
            }
        }
    }
    out
}

fn nearest_distances(from: &[[i64; 3]], to: &[[i64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            let mut best = i64::MAX;
            for q in to {
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                let dz = p[2] - q[2];
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < best {
                    best = d2;
                }
            }
            (best as f64).sqrt()
        })
        .collect()
}

/// Nearest-rank percentile of a sorted sample, `p` in (0,1].
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// 95th percentile of the pooled symmetric surface-distance multiset,
/// scaled by voxel size. Errors when either class mask is empty.
pub fn hd95(a: &LabelGrid, b: &LabelGrid, class: u8) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dim(
            format!("{:?}", a.dims),
            format!("{:?}", b.dims),
            "hd95",
        ));
    }
    let sa = surface_voxels(a, class);
    let sb = surface_voxels(b, class);
    if sa.is_empty() {
        return Err(Error::EmptyMask("first"));
    }
    if sb.is_empty() {
        return Err(Error::EmptyMask("second"));
    }
    let mut pooled = nearest_distances(&sa, &sb);
    pooled.extend(nearest_distances(&sb, &sa));
    pooled.sort_by(f64::total_cmp);
    Ok(nearest_rank(&pooled, 0.95) * a.voxel_size)
}

/// Per-chamber volumes per frame, flattened frame-major in the order
/// LV, RV, LA, RA. Length is 4*M.
pub fn volume_curve(seq: &ShapeSequence, voxel_size: f64) -> Vec<f64> {
    let scale = voxel_size * voxel_size * voxel_size;
    let mut out = Vec::with_capacity(4 * seq.num_frames());
    for frame in &seq.frames {
        for &class in &VOLUME_CHAMBERS {
            out.push(frame.class_volume(class) as f64 * scale);
        }
    }
    out
}

/// Mean over the 5 foreground classes of DSC between the first and last
/// frame of a cycle.
pub fn cycle_dsc(seq: &ShapeSequence) -> Result<f64> {
    if seq.num_frames() < 2 {
        return Err(Error::InvalidArgument("cycle_dsc needs M >= 2".into()));
    }
    let first = &seq.frames[0];
    let last = &seq.frames[seq.num_frames() - 1];
    let mut total = 0.0;
    for class in 1..=5u8 {
        total += dsc(first, last, class)?;
    }
    Ok(total / 5.0)
}

/// Mean and shrunk covariance of a set of equal-length curves.
#[derive(Debug, Clone)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

/// Unbiased sample covariance with diagonal shrinkage scaled to the
/// covariance's own trace.
pub fn gaussian_summary(curves: &[Vec<f64>]) -> Result<GaussianSummary> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 2 curves for a Gaussian summary, got {}",
            curves.len()
        )));
    }
    let d = curves[0].len();
    for c in curves {
        if c.len() != d {
            return Err(Error::dim(d, c.len(), "curve length"));
        }
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; d];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n;
        }
    }
    let mut cov = SymMatrix::zeros(d);
    for c in curves {
        for i in 0..d {
            let di = c[i] - mean[i];
            if di == 0.0 {
                continue;
            }
            for j in 0..d {
                cov.data[i * d + j] += di * (c[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let trace_scale = (cov.trace() / d as f64).max(1.0);
    cov.add_diag(1e-6 * trace_scale);
    Ok(GaussianSummary { mean, cov })
}

/// Exact Fréchet distance between two Gaussians:
/// `||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})`, evaluated through the
/// symmetric form `S1^{1/2} S2 S1^{1/2}` with eigenvalue clamping.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::dim(a.mean.len(), b.mean.len(), "frechet mean"));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(mean_term + frechet_trace_term(&a.cov, &b.cov)?)
}

/// The covariance part `tr(S1 + S2 - 2 (S1 S2)^{1/2})` alone.
pub fn frechet_trace_term(s1: &SymMatrix, s2: &SymMatrix) -> Result<f64> {
    let r1 = sym_sqrt(s1)?;
    let inner = r1.matmul(s2).matmul(&r1);
    // Symmetrize against round-off before the eigensolve.
    let n = inner.n;
    let mut symm = inner.clone();
    for i in 0..n {
        for j in 0..n {
            symm.data[i * n + j] = 0.5 * (inner.get(i, j) + inner.get(j, i));
        }
    }
    let (eig, _) = jacobi_eigen(&symm)?;
    let cross: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok(s1.trace() + s2.trace() - 2.0 * cross)
}

/// Volume Fréchet distance between generated and reference curve sets.
/// Small negative round-off is clamped to zero.
pub fn vfid(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    let g = gaussian_summary(generated)?;
    let r = gaussian_summary(reference)?;
    if g.mean.len() != r.mean.len() {
        return Err(Error::dim(g.mean.len(), r.mean.len(), "vfid curve length"));
    }
    Ok(frechet_distance(&g, &r)?.max(0.0))
}

/// Two-sided paired t-test on `x - y`.
pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::dim(x.len(), y.len(), "paired samples"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs n >= 2".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dof = (n - 1) as f64;
    let p = student_t_two_sided_p(t, dof);
    Ok((t, p))
}

/// Two-sided p-value of Student's t via the regularized incomplete beta:
/// `p = I_{v/(v+t^2)}(v/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(0.5 * dof, 0.5, x)
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..200 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        76.180091729471457,
        -86.505320329416776,
        24.014098240830911,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
        2.5066282746310005,
    ];
    let y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    let mut yy = y;
    for g in &G[..6] {
        yy += 1.0;
        ser += g / yy;
    }
    -tmp + (G[6] * ser / x).ln()
}
