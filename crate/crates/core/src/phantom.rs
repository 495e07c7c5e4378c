//! Procedural periodic four-chamber label phantoms and the multi-view
//! slice corruption simulator. This is the repo's data source: chambers
//! are time-scaled ellipsoids, ventricles and atria contracting in
//! anti-phase over an exactly cyclic M-frame heartbeat.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{
    LabelGrid, ShapeSequence, CLASS_LA, CLASS_LV, CLASS_LVM, CLASS_RA, CLASS_RV, UNKNOWN_CLASS,
};
use crate::rng::{rng_from_seed, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseClass {
    Ventricular,
    Atrial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chamber {
    pub class: u8,
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Contraction amplitude in [0, 1).
    pub amplitude: f64,
    pub phase: PhaseClass,
}

/// Everything needed to re-render one synthetic subject deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    /// LV, RV, LA, RA in this order. The LVM shell derives from the LV.
    pub chambers: Vec<Chamber>,
    /// LVM shell width in voxels around the scaled LV ellipsoid.
    pub shell_width: f64,
    /// Small-angle rotation (radians) about the grid center, Rz*Ry*Rx.
    pub rotation: [f64; 3],
    pub seed: u64,
}

pub const DEFAULT_DIMS: (usize, usize, usize) = (32, 32, 40);
pub const DEFAULT_FRAMES: usize = 20;

/// Cyclic contraction profile, `g(u) = (1 - cos 2*pi*u)/2`.
pub fn contraction(u: f64) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * u).cos())
}

fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    // Rz(c) * Ry(b) * Rx(a)
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

/// Samples one subject's anatomy from the documented jitter ranges.
/// Deterministic in the seed. Canonical centers and radii are expressed
/// as fractions of the grid so non-default dims scale along.
pub fn generate_subject(seed: u64, dims: (usize, usize, usize)) -> SubjectParams {
    let mut rng = rng_from_seed(seed ^ 0x5048414e544f4d00); // phantom-specific stream
    let (nx, ny, nz) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);

    // (class, center fractions, radii fractions, phase)
    let canon = [
        (
            CLASS_LV,
            [0.34 * nx, 0.50 * ny, 0.34 * nz],
            [0.155 * nx, 0.155 * ny, 0.165 * nz],
            PhaseClass::Ventricular,
        ),
        (
            CLASS_RV,
            [0.68 * nx, 0.50 * ny, 0.34 * nz],
            [0.145 * nx, 0.175 * ny, 0.160 * nz],
            PhaseClass::Ventricular,
        ),
        (
            CLASS_LA,
            [0.34 * nx, 0.50 * ny, 0.72 * nz],
            [0.130 * nx, 0.130 * ny, 0.125 * nz],
            PhaseClass::Atrial,
        ),
        (
            CLASS_RA,
            [0.68 * nx, 0.50 * ny, 0.72 * nz],
            [0.140 * nx, 0.140 * ny, 0.125 * nz],
            PhaseClass::Atrial,
        ),
    ];

    let mut chambers = Vec::with_capacity(4);
    for (class, center, radii, phase) in canon {
        let center = [
            center[0] + rng.random_range(-1.5..1.5),
            center[1] + rng.random_range(-1.5..1.5),
            center[2] + rng.random_range(-1.5..1.5),
        ];
        let radii = [
            radii[0] * rng.random_range(0.85..1.15),
            radii[1] * rng.random_range(0.85..1.15),
            radii[2] * rng.random_range(0.85..1.15),
        ];
        let amplitude = match phase {
            PhaseClass::Ventricular => rng.random_range(0.15..0.35),
            PhaseClass::Atrial => rng.random_range(0.10..0.25),
        };
        chambers.push(Chamber {
            class,
            center,
            radii,
            amplitude,
            phase,
        });
    }
    let max_angle = 5f64.to_radians();
    let rotation = [
        rng.random_range(-max_angle..max_angle),
        rng.random_range(-max_angle..max_angle),
        rng.random_range(-max_angle..max_angle),
    ];
    SubjectParams {
        chambers,
        shell_width: 0.055 * nx,
        rotation,
        seed,
    }
}

impl SubjectParams {
    /// True when every chamber (LVM shell included) stays inside the grid
    /// with at least one voxel of margin at maximum dilation (scale 1).
    pub fn fits_in_grid(&self, dims: (usize, usize, usize)) -> bool {
        let r = rotation_matrix(self.rotation);
        let gc = [
            (dims.0 as f64 - 1.0) / 2.0,
            (dims.1 as f64 - 1.0) / 2.0,
            (dims.2 as f64 - 1.0) / 2.0,
        ];
        for ch in &self.chambers {
            let extra = if ch.class == CLASS_LV {
                self.shell_width
            } else {
                0.0
            };
            let radii = [
                ch.radii[0] + extra,
                ch.radii[1] + extra,
                ch.radii[2] + extra,
            ];
            // rotated center
            let off = [
                ch.center[0] - gc[0],
                ch.center[1] - gc[1],
                ch.center[2] - gc[2],
            ];
            let dim_arr = [dims.0 as f64, dims.1 as f64, dims.2 as f64];
            for i in 0..3 {
                let c = gc[i] + r[i][0] * off[0] + r[i][1] * off[1] + r[i][2] * off[2];
                // support of the rotated ellipsoid along axis i
                let extent = (r[i][0] * radii[0]).powi(2)
                    + (r[i][1] * radii[1]).powi(2)
                    + (r[i][2] * radii[2]).powi(2);
                let extent = extent.sqrt();
                if c - extent < 1.0 || c + extent > dim_arr[i] - 2.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Chamber scale factor at frame `tau` (1-based); exactly M-periodic
/// because the frame index is reduced with integer arithmetic first.
fn frame_scale(chamber: &Chamber, tau: usize, m: usize) -> f64 {
    let idx = (tau - 1) % m;
    let g = match chamber.phase {
        PhaseClass::Ventricular => contraction(idx as f64 / m as f64),
        // Atria run half a cycle out of phase. 2*idx+m keeps the argument
        // an exact rational of the same form for bit-stable wrapping.
        PhaseClass::Atrial => contraction((2 * idx + m) as f64 / (2 * m) as f64),
    };
    1.0 - chamber.amplitude * g
}

/// Voxelizes one frame. Class precedence LV > LVM > RV > LA > RA.
pub fn render_frame(
    subject: &SubjectParams,
    tau: usize,
    m: usize,
    dims: (usize, usize, usize),
) -> Result<LabelGrid> {
    if tau < 1 {
        return Err(Error::InvalidArgument("frame index tau must be >= 1".into()));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("frames per cycle must be >= 2".into()));
    }
    let mut grid = LabelGrid::new(dims, 1.0);
    let r = rotation_matrix(subject.rotation);
    let gc = [
        (dims.0 as f64 - 1.0) / 2.0,
        (dims.1 as f64 - 1.0) / 2.0,
        (dims.2 as f64 - 1.0) / 2.0,
    ];

    // Precompute per-chamber scaled radii in precedence order:
    // (class, center, radii) tested first wins.
    let lv = &subject.chambers[0];
    let lv_scale = frame_scale(lv, tau, m);
    let mut shapes: Vec<(u8, [f64; 3], [f64; 3])> = Vec::with_capacity(5);
    shapes.push((
        CLASS_LV,
        lv.center,
        [
            lv.radii[0] * lv_scale,
            lv.radii[1] * lv_scale,
            lv.radii[2] * lv_scale,
        ],
    ));
    shapes.push((
        CLASS_LVM,
        lv.center,
        [
            lv.radii[0] * lv_scale + subject.shell_width,
            lv.radii[1] * lv_scale + subject.shell_width,
            lv.radii[2] * lv_scale + subject.shell_width,
        ],
    ));
    for ch in &subject.chambers[1..] {
        let s = frame_scale(ch, tau, m);
        shapes.push((
            ch.class,
            ch.center,
            [ch.radii[0] * s, ch.radii[1] * s, ch.radii[2] * s],
        ));
    }

    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                // rotate the voxel into the phantom frame (inverse rotation)
                let p = [x as f64 - gc[0], y as f64 - gc[1], z as f64 - gc[2]];
                let q = [
                    gc[0] + r[0][0] * p[0] + r[1][0] * p[1] + r[2][0] * p[2],
                    gc[1] + r[0][1] * p[0] + r[1][1] * p[1] + r[2][1] * p[2],
                    gc[2] + r[0][2] * p[0] + r[1][2] * p[1] + r[2][2] * p[2],
                ];
                for (class, center, radii) in &shapes {
                    let dx = (q[0] - center[0]) / radii[0];
                    let dy = (q[1] - center[1]) / radii[1];
                    let dz = (q[2] - center[2]) / radii[2];
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        grid.set(x, y, z, *class);
                        break;
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Renders a full M-frame cycle.
pub fn render_sequence(
    subject: &SubjectParams,
    m: usize,
    dims: (usize, usize, usize),
) -> Result<ShapeSequence> {
    let frames: Result<Vec<_>> = (1..=m).map(|tau| render_frame(subject, tau, m, dims)).collect();
    ShapeSequence::new(frames?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewTag {
    /// Short-axis slice index.
    Sax(usize),
    LaxTwoChamber,
    LaxFourChamber,
}

/// One acquisition plane: origin plus two in-plane axes in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlane {
    pub view: ViewTag,
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub size: (usize, usize),
}

/// One extracted 2D label slice with its applied in-plane shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub plane: SlicePlane,
    pub labels: Vec<u8>,
    /// In-plane shift (voxels) applied when sampling.
    pub shift: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub slices: Vec<Slice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSimConfig {
    /// Corruption level in voxels; per-slice shifts are N(0, lambda^2 I).
    pub lambda: f64,
    /// Upper end of the uniform range training draws lambda from.
    pub lambda_max: f64,
    pub sax_start: usize,
    pub sax_spacing: usize,
    pub sax_count: usize,
    pub lax_planes: Vec<SlicePlane>,
    pub seed: u64,
}

impl SliceSimConfig {
    /// Default protocol for a grid: SAX stack along z plus the standard
    /// two- and four-chamber LAX planes through the chamber centers.
    pub fn default_for_dims(dims: (usize, usize, usize), lambda: f64, seed: u64) -> Self {
        let (nx, ny, nz) = dims;
        let lax_planes = vec![
            SlicePlane {
                view: ViewTag::LaxTwoChamber,
                origin: [(0.34 * nx as f64).round(), 0.0, 0.0],
                axis_u: [0.0, 1.0, 0.0],
                axis_v: [0.0, 0.0, 1.0],
                size: (ny, nz),
            },
            SlicePlane {
                view: ViewTag::LaxFourChamber,
                origin: [0.0, (0.50 * ny as f64).round(), 0.0],
                axis_u: [1.0, 0.0, 0.0],
                axis_v: [0.0, 0.0, 1.0],
                size: (nx, nz),
            },
        ];
        SliceSimConfig {
            lambda,
            lambda_max: 2.0,
            sax_start: 2,
            sax_spacing: 4,
            sax_count: (nz - 4) / 4,
            lax_planes,
            seed,
        }
    }

    pub fn planes(&self, dims: (usize, usize, usize)) -> Vec<SlicePlane> {
        let (nx, ny, _) = dims;
        let mut planes = Vec::new();
        for k in 0..self.sax_count {
            planes.push(SlicePlane {
                view: ViewTag::Sax(k),
                origin: [0.0, 0.0, (self.sax_start + k * self.sax_spacing) as f64],
                axis_u: [1.0, 0.0, 0.0],
                axis_v: [0.0, 1.0, 0.0],
                size: (nx, ny),
            });
        }
        planes.extend(self.lax_planes.iter().cloned());
        planes
    }
}

fn plane_point(plane: &SlicePlane, i: f64, j: f64) -> [f64; 3] {
    [
        plane.origin[0] + i * plane.axis_u[0] + j * plane.axis_v[0],
        plane.origin[1] + i * plane.axis_u[1] + j * plane.axis_v[1],
        plane.origin[2] + i * plane.axis_u[2] + j * plane.axis_v[2],
    ]
}

fn check_plane_inside(plane: &SlicePlane, dims: (usize, usize, usize)) -> Result<()> {
    let (nu, nv) = plane.size;
    for (i, j) in [
        (0.0, 0.0),
        ((nu - 1) as f64, 0.0),
        (0.0, (nv - 1) as f64),
        ((nu - 1) as f64, (nv - 1) as f64),
    ] {
        let p = plane_point(plane, i, j);
        if p[0] < -0.5
            || p[1] < -0.5
            || p[2] < -0.5
            || p[0] > dims.0 as f64 - 0.5
            || p[1] > dims.1 as f64 - 0.5
            || p[2] > dims.2 as f64 - 0.5
        {
            return Err(Error::PlaneOutsideGrid(format!(
                "{:?} corner ({i},{j}) maps to {p:?} in dims {dims:?}",
                plane.view
            )));
        }
    }
    Ok(())
}

/// Extracts corrupted multi-view slices from a grid. Each slice gets an
/// independent in-plane shift drawn from N(0, lambda^2 I); labels are
/// nearest-neighbor resamples at the shifted coordinates.
pub fn extract_slices(grid: &LabelGrid, config: &SliceSimConfig) -> Result<SliceStack> {
    let mut rng = rng_from_seed(config.seed ^ 0x534c494345535953);
    let mut slices = Vec::new();
    for plane in config.planes(grid.dims) {
        check_plane_inside(&plane, grid.dims)?;
        let shift = [
            config.lambda * standard_normal(&mut rng),
            config.lambda * standard_normal(&mut rng),
        ];
        let (nu, nv) = plane.size;
        let mut labels = vec![0u8; nu * nv];
        for j in 0..nv {
            for i in 0..nu {
                let p = plane_point(&plane, i as f64 + shift[0], j as f64 + shift[1]);
                labels[i + nu * j] = grid.sample_nearest(p).unwrap_or(0);
            }
        }
        slices.push(Slice {
            plane,
            labels,
            shift,
        });
    }
    Ok(SliceStack { slices })
}

/// Paints the slices back into a volume at their shifted positions.
/// Uncovered voxels carry the distinguished unknown code; overlaps are
/// resolved by write order (SAX first, then LAX, last writer wins).
pub fn rasterize_slices(stack: &SliceStack, dims: (usize, usize, usize)) -> LabelGrid {
    let mut grid = LabelGrid::new(dims, 1.0);
    grid.labels.fill(UNKNOWN_CLASS);
    for slice in &stack.slices {
        let (nu, nv) = slice.plane.size;
        for j in 0..nv {
            for i in 0..nu {
                let p = plane_point(
                    &slice.plane,
                    i as f64 + slice.shift[0],
                    j as f64 + slice.shift[1],
                );
                let (x, y, z) = (p[0].round(), p[1].round(), p[2].round());
                if x < 0.0 || y < 0.0 || z < 0.0 {
                    continue;
                }
                let (x, y, z) = (x as usize, y as usize, z as usize);
                if x >= dims.0 || y >= dims.1 || z >= dims.2 {
                    continue;
                }
                grid.set(x, y, z, slice.labels[i + nu * j]);
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CLASS_BACKGROUND;

    const DIMS: (usize, usize, usize) = DEFAULT_DIMS;

    #[test]
    fn subject_generation_is_deterministic() {
        assert_eq!(generate_subject(42, DIMS), generate_subject(42, DIMS));
        assert_ne!(generate_subject(42, DIMS), generate_subject(43, DIMS));
    }

    #[test]
    fn hundred_subjects_fit_in_grid() {
        for seed in 0..100 {
            let s = generate_subject(seed, DIMS);
            assert!(s.fits_in_grid(DIMS), "seed {seed} violates the fit invariant");
        }
    }

    #[test]
    fn amplitude_sample_mean_matches_configured_range() {
        // Ventricular amplitudes are U[0.15, 0.35): mean 0.25, sd 0.2/sqrt(12).
        let n = 1000;
        let mean: f64 = (0..n)
            .map(|s| generate_subject(s, DIMS).chambers[0].amplitude)
            .sum::<f64>()
            / n as f64;
        let se = (0.2 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn frames_wrap_bit_exactly() {
        let s = generate_subject(7, DIMS);
        let m = 20;
        for tau in [1usize, 5, 13] {
            let a = render_frame(&s, tau, m, DIMS).unwrap();
            let b = render_frame(&s, tau + m, m, DIMS).unwrap();
            assert_eq!(a, b, "tau {tau}");
        }
    }

    #[test]
    fn zero_amplitude_heart_is_static() {
        let mut s = generate_subject(3, DIMS);
        for ch in s.chambers.iter_mut() {
            ch.amplitude = 0.0;
        }
        let f1 = render_frame(&s, 1, 20, DIMS).unwrap();
        let f7 = render_frame(&s, 7, 20, DIMS).unwrap();
        assert_eq!(f1, f7);
    }

    #[test]
    fn tau_zero_rejected() {
        let s = generate_subject(1, DIMS);
        assert!(render_frame(&s, 0, 20, DIMS).is_err());
    }

    #[test]
    fn lv_min_and_la_max_at_mid_cycle() {
        let s = generate_subject(11, DIMS);
        let m = 20;
        let lv: Vec<usize> = (1..=m)
            .map(|t| render_frame(&s, t, m, DIMS).unwrap().class_volume(CLASS_LV))
            .collect();
        let la: Vec<usize> = (1..=m)
            .map(|t| render_frame(&s, t, m, DIMS).unwrap().class_volume(CLASS_LA))
            .collect();
        let mid = m / 2; // tau = M/2 + 1 is index mid
        let lv_argmin = lv.iter().enumerate().min_by_key(|(_, &v)| v).unwrap().0;
        let la_argmax = la.iter().enumerate().max_by_key(|(_, &v)| v).unwrap().0;
        assert_eq!(lv_argmin, mid);
        assert_eq!(la_argmax, mid);
    }

    #[test]
    fn anti_phase_extremes_at_frame_one() {
        let s = generate_subject(19, DIMS);
        let m = 20;
        let vent: Vec<usize> = (1..=m)
            .map(|t| {
                let f = render_frame(&s, t, m, DIMS).unwrap();
                f.class_volume(CLASS_LV) + f.class_volume(CLASS_LVM) + f.class_volume(CLASS_RV)
            })
            .collect();
        let atr: Vec<usize> = (1..=m)
            .map(|t| {
                let f = render_frame(&s, t, m, DIMS).unwrap();
                f.class_volume(CLASS_LA) + f.class_volume(CLASS_RA)
            })
            .collect();
        let v_argmax = vent.iter().enumerate().max_by_key(|(_, &v)| v).unwrap().0;
        let a_argmin = atr.iter().enumerate().min_by_key(|(_, &v)| v).unwrap().0;
        assert_eq!(v_argmax, 0);
        assert_eq!(a_argmin, 0);
    }

    #[test]
    fn lvm_shell_touches_lv() {
        // every LVM voxel has an LV voxel within the shell width
        let s = generate_subject(23, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let reach = s.shell_width.ceil() as i64 + 1;
        let (nx, ny, nz) = g.dims;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if g.get(x, y, z) != CLASS_LVM {
                        continue;
                    }
                    let mut found = false;
                    'outer: for dz in -reach..=reach {
                        for dy in -reach..=reach {
                            for dx in -reach..=reach {
                                let (cx, cy, cz) =
                                    (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if cx >= 0
                                    && cy >= 0
                                    && cz >= 0
                                    && (cx as usize) < nx
                                    && (cy as usize) < ny
                                    && (cz as usize) < nz
                                    && g.get(cx as usize, cy as usize, cz as usize) == CLASS_LV
                                {
                                    found = true;
                                    break 'outer;
                                }
                            }
                        }
                    }
                    assert!(found, "LVM voxel ({x},{y},{z}) far from any LV voxel");
                }
            }
        }
    }

    #[test]
    fn uncorrupted_sax_slices_match_source_planes() {
        let s = generate_subject(5, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let config = SliceSimConfig::default_for_dims(DIMS, 0.0, 9);
        let stack = extract_slices(&g, &config).unwrap();
        for slice in &stack.slices {
            if let ViewTag::Sax(_) = slice.plane.view {
                let z = slice.plane.origin[2] as usize;
                for y in 0..DIMS.1 {
                    for x in 0..DIMS.0 {
                        assert_eq!(slice.labels[x + DIMS.0 * y], g.get(x, y, z));
                    }
                }
            }
        }
    }

    #[test]
    fn four_chamber_lax_plane_sees_all_classes() {
        // the 4ch plane passes through all chamber centers by construction
        let s = generate_subject(2, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let config = SliceSimConfig::default_for_dims(DIMS, 0.0, 0);
        let stack = extract_slices(&g, &config).unwrap();
        let lax4 = stack
            .slices
            .iter()
            .find(|s| s.plane.view == ViewTag::LaxFourChamber)
            .unwrap();
        for class in [CLASS_LV, CLASS_LVM, CLASS_RV, CLASS_LA, CLASS_RA] {
            assert!(
                lax4.labels.contains(&class),
                "class {class} missing from the 4ch view"
            );
        }
    }

    #[test]
    fn shift_standard_deviation_tracks_lambda() {
        let s = generate_subject(4, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let mut shifts = Vec::new();
        let mut seed = 0u64;
        while shifts.len() < 1000 {
            let config = SliceSimConfig::default_for_dims(DIMS, 2.0, seed);
            let stack = extract_slices(&g, &config).unwrap();
            for sl in stack.slices {
                shifts.push(sl.shift[0]);
                shifts.push(sl.shift[1]);
            }
            seed += 1;
        }
        let n = shifts.len() as f64;
        let mean = shifts.iter().sum::<f64>() / n;
        let sd = (shifts.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((1.8..2.2).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn corruption_magnitude_monotone_in_lambda() {
        let s = generate_subject(4, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let mean_mag = |lambda: f64| {
            let mut mags = Vec::new();
            for seed in 0..100 {
                let config = SliceSimConfig::default_for_dims(DIMS, lambda, seed);
                for sl in extract_slices(&g, &config).unwrap().slices {
                    mags.push((sl.shift[0].powi(2) + sl.shift[1].powi(2)).sqrt());
                }
            }
            mags.iter().sum::<f64>() / mags.len() as f64
        };
        let (m0, m1, m2) = (mean_mag(0.0), mean_mag(1.0), mean_mag(2.0));
        assert!(m0 <= m1 && m1 <= m2, "{m0} {m1} {m2}");
    }

    #[test]
    fn empty_stack_rasterizes_to_all_unknown() {
        let grid = rasterize_slices(&SliceStack { slices: vec![] }, DIMS);
        assert!(grid.labels.iter().all(|&c| c == UNKNOWN_CLASS));
    }

    #[test]
    fn full_coverage_sax_rasterization_is_identity() {
        let s = generate_subject(6, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let config = SliceSimConfig {
            lambda: 0.0,
            lambda_max: 0.0,
            sax_start: 0,
            sax_spacing: 1,
            sax_count: DIMS.2,
            lax_planes: vec![],
            seed: 0,
        };
        let stack = extract_slices(&g, &config).unwrap();
        let raster = rasterize_slices(&stack, DIMS);
        assert_eq!(raster.labels, g.labels);
    }

    #[test]
    fn single_shifted_slice_covers_exactly_one_plane() {
        let s = generate_subject(6, DIMS);
        let g = render_frame(&s, 1, 20, DIMS).unwrap();
        let config = SliceSimConfig {
            lambda: 1.5,
            lambda_max: 2.0,
            sax_start: 12,
            sax_spacing: 1,
            sax_count: 1,
            lax_planes: vec![],
            seed: 77,
        };
        let stack = extract_slices(&g, &config).unwrap();
        let raster = rasterize_slices(&stack, DIMS);
        // known voxels form exactly one z-plane
        for z in 0..DIMS.2 {
            if z == 12 {
                continue;
            }
            for y in 0..DIMS.1 {
                for x in 0..DIMS.0 {
                    assert_eq!(raster.get(x, y, z), UNKNOWN_CLASS);
                }
            }
        }
        // every written voxel equals the shifted resample of its pixel
        let slice = &stack.slices[0];
        let mut known = 0usize;
        for j in 0..DIMS.1 {
            for i in 0..DIMS.0 {
                let x = (i as f64 + slice.shift[0]).round();
                let y = (j as f64 + slice.shift[1]).round();
                if x < 0.0 || y < 0.0 || x >= DIMS.0 as f64 || y >= DIMS.1 as f64 {
                    continue;
                }
                assert_eq!(
                    raster.get(x as usize, y as usize, 12),
                    slice.labels[i + DIMS.0 * j]
                );
                known += 1;
            }
        }
        assert!(known > 0);
    }

    #[test]
    fn out_of_grid_plane_rejected() {
        let g = LabelGrid::new(DIMS, 1.0);
        let mut config = SliceSimConfig::default_for_dims(DIMS, 0.0, 0);
        config.sax_start = DIMS.2 + 3;
        config.sax_count = 1;
        assert!(matches!(
            extract_slices(&g, &config),
            Err(Error::PlaneOutsideGrid(_))
        ));
    }

    #[test]
    fn chamber_classes_are_disjoint_by_construction() {
        let s = generate_subject(8, DIMS);
        let g = render_frame(&s, 5, 20, DIMS).unwrap();
        // all voxels carry exactly one class id in range
        assert!(g.labels.iter().all(|&c| c <= CLASS_RA || c == CLASS_BACKGROUND));
    }
}
