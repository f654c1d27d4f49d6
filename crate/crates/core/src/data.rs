//! Synthetic binary shapes and the thick-slice degradation operator.
//!
//! Coordinates: voxel `(i, j, k)` of a `dx x dy x dz` grid has its centre at
//! `((i + 0.5) / dx * 2 - 1, ...)`, so every axis spans `[-1, 1]`. Occupancy
//! is stored x-fastest: index `i + dx * (j + dy * k)`.

use std::collections::VecDeque;

use crate::error::{contract, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(dims: [usize; 3]) -> Self {
        VoxelGrid {
            dims,
            occupancy: vec![false; dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 3]) -> Self {
        VoxelGrid {
            dims,
            occupancy: vec![true; dims.iter().product()],
        }
    }

    pub fn from_occupancy(dims: [usize; 3], occupancy: Vec<bool>) -> Result<Self> {
        if dims.contains(&0) || occupancy.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape {
                op: "VoxelGrid",
                lhs: dims.to_vec(),
                rhs: vec![occupancy.len()],
            });
        }
        Ok(VoxelGrid { dims, occupancy })
    }

    /// Binarizes values at `threshold` (`v >= threshold` is occupied).
    pub fn from_values(dims: [usize; 3], values: &[f64], threshold: f64) -> Result<Self> {
        Self::from_occupancy(dims, values.iter().map(|&v| v >= threshold).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = v;
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    /// Occupancy as `0.0 / 1.0` values.
    pub fn to_values(&self) -> Vec<f64> {
        self.occupancy.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    pub fn complement(&self) -> Self {
        VoxelGrid {
            dims: self.dims,
            occupancy: self.occupancy.iter().map(|b| !b).collect(),
        }
    }

    /// Voxel centre in normalized `[-1, 1]` coordinates.
    pub fn centre(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let c = |i: usize, d: usize| (i as f64 + 0.5) / d as f64 * 2.0 - 1.0;
        [c(x, self.dims[0]), c(y, self.dims[1]), c(z, self.dims[2])]
    }

    /// Sizes of the 6-connected occupied components, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.label_components().1;
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// Grid holding only the largest 6-connected component.
    pub fn largest_component(&self) -> Self {
        let (labels, sizes) = self.label_components();
        let Some((best, _)) = sizes.iter().enumerate().max_by_key(|&(i, s)| (s, std::cmp::Reverse(i)))
        else {
            return self.clone();
        };
        VoxelGrid {
            dims: self.dims,
            occupancy: labels.iter().map(|&l| l == best + 1).collect(),
        }
    }

    // labels: 0 = empty, c + 1 = component c
    fn label_components(&self) -> (Vec<usize>, Vec<usize>) {
        let [dx, dy, dz] = self.dims;
        let mut labels = vec![0usize; self.len()];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.len() {
            if !self.occupancy[start] || labels[start] != 0 {
                continue;
            }
            sizes.push(0);
            let label = sizes.len();
            labels[start] = label;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                sizes[label - 1] += 1;
                let (x, y, z) = (i % dx, (i / dx) % dy, i / (dx * dy));
                let mut visit = |j: usize| {
                    if self.occupancy[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < dx {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - dx);
                }
                if y + 1 < dy {
                    visit(i + dx);
                }
                if z > 0 {
                    visit(i - dx * dy);
                }
                if z + 1 < dz {
                    visit(i + dx * dy);
                }
            }
        }
        (labels, sizes)
    }
}

/// A cylindrical process leaving the body centre within the axial (x-y) plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    /// Angle from the `-y` direction towards `+x`, radians.
    pub angle: f64,
    /// Tilt out of the axial plane towards `+z`, radians.
    pub tilt: f64,
    pub radius: f64,
    pub length: f64,
}

/// Parameters of one pseudo-vertebra, in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams {
    pub centre: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Superellipsoid exponent; 2 is an ellipsoid.
    pub exponent: f64,
    pub processes: Vec<Process>,
    /// Amplitude of the smooth surface perturbation (relative to the
    /// implicit-function level 1).
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl ShapeParams {
    /// Draws parameters from the default pseudo-vertebra distribution: a
    /// rounded body in the anterior half, a posterior spinous process and two
    /// transverse processes.
    pub fn sample(rng: &mut Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.uniform_in(lo, hi);
        let centre = [u(-0.05, 0.05), u(0.2, 0.3), u(-0.05, 0.05)];
        let semi_axes = [u(0.5, 0.62), u(0.38, 0.48), u(0.45, 0.6)];
        let exponent = u(2.0, 3.2);
        let spin = Process {
            angle: u(-0.15, 0.15),
            tilt: u(-0.25, 0.1),
            radius: u(0.09, 0.13),
            length: u(0.85, 1.05),
        };
        let spread = u(0.95, 1.3);
        let transverse = [-1.0, 1.0].map(|side| Process {
            angle: side * (spread + 0.05 * rng.normal()),
            tilt: 0.05 * rng.normal(),
            radius: rng.uniform_in(0.07, 0.1),
            length: rng.uniform_in(0.75, 0.9),
        });
        let noise_amplitude = rng.uniform_in(0.04, 0.12);
        let seed = rng.next_u64();
        let mut processes = vec![spin];
        processes.extend(transverse);
        ShapeParams {
            centre,
            semi_axes,
            exponent,
            processes,
            noise_amplitude,
            seed,
        }
    }

    /// Ellipsoid with no processes and no surface noise.
    pub fn ellipsoid(centre: [f64; 3], semi_axes: [f64; 3]) -> Self {
        ShapeParams {
            centre,
            semi_axes,
            exponent: 2.0,
            processes: Vec::new(),
            noise_amplitude: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0) {
            return Err(contract(format!("superellipsoid exponent {} must be > 0", self.exponent)));
        }
        for a in self.semi_axes {
            if !(a > 0.0 && a <= 1.0) {
                return Err(contract(format!("semi-axis {a} outside (0, 1]")));
            }
        }
        if self.processes.iter().any(|p| !(p.radius > 0.0 && p.length >= 0.0)) {
            return Err(contract("process radius must be > 0 and length >= 0"));
        }
        Ok(())
    }
}

/// Smooth random field: mean of four plane waves, values in `[-1, 1]`.
struct SurfaceNoise {
    waves: Vec<([f64; 3], f64)>,
}

impl SurfaceNoise {
    fn new(seed: u64) -> Self {
        let mut rng = Rng::with_stream(seed, 0x5eed);
        let waves = (0..4)
            .map(|_| {
                let dir = [rng.normal(), rng.normal(), rng.normal()];
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                let freq = rng.uniform_in(3.0, 7.0);
                let k = dir.map(|v| v / norm * freq);
                (k, rng.uniform_in(0.0, std::f64::consts::TAU))
            })
            .collect();
        SurfaceNoise { waves }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(k, phase)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin())
            .sum::<f64>()
            / self.waves.len() as f64
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], dir: [f64; 3], len: f64) -> f64 {
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let s = (ap[0] * dir[0] + ap[1] * dir[1] + ap[2] * dir[2]).clamp(0.0, len);
    let q = [ap[0] - s * dir[0], ap[1] - s * dir[1], ap[2] - s * dir[2]];
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
}

/// Rasterizes a pseudo-vertebra: superellipsoid body united with cylindrical
/// processes, with the implicit surface perturbed by seeded smooth noise.
/// Only the largest 6-connected component is kept.
pub fn gen_pseudo_vertebra(params: &ShapeParams, dims: [usize; 3]) -> Result<VoxelGrid> {
    params.validate()?;
    if dims.contains(&0) {
        return Err(contract(format!("grid dims {dims:?} must be positive")));
    }
    let noise = SurfaceNoise::new(params.seed);
    let dirs: Vec<[f64; 3]> = params
        .processes
        .iter()
        .map(|p| {
            let (sa, ca) = p.angle.sin_cos();
            let (st, ct) = p.tilt.sin_cos();
            [sa * ct, -ca * ct, st]
        })
        .collect();
    let mut grid = VoxelGrid::empty(dims);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = grid.centre(x, y, z);
                let level = 1.0
                    + if params.noise_amplitude > 0.0 {
                        params.noise_amplitude * noise.at(p)
                    } else {
                        0.0
                    };
                let body: f64 = (0..3)
                    .map(|i| ((p[i] - params.centre[i]) / params.semi_axes[i]).abs().powf(params.exponent))
                    .sum();
                let inside = body <= level
                    || params.processes.iter().zip(&dirs).any(|(proc_, d)| {
                        segment_distance(p, params.centre, *d, proc_.length) / proc_.radius <= level
                    });
                if inside {
                    grid.set(x, y, z, true);
                }
            }
        }
    }
    let grid = grid.largest_component();
    if grid.count() == 0 {
        return Err(Error::Generation(format!(
            "parameters produce an empty shape on a {dims:?} grid"
        )));
    }
    Ok(grid)
}

/// `n` pseudo-vertebrae, sample `i` drawn from stream `i` of `seed`.
/// Degenerate draws are redrawn from the same stream.
pub fn gen_vertebra_dataset(n: usize, dims: [usize; 3], seed: u64) -> Result<Vec<VoxelGrid>> {
    let root = Rng::with_stream(seed, 1);
    (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let mut last = None;
            for _ in 0..16 {
                match gen_pseudo_vertebra(&ShapeParams::sample(&mut rng), dims) {
                    Ok(g) => return Ok(g),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeParams {
    /// Through-plane voxels merged into one acquired slice.
    pub slab_thickness: usize,
    pub threshold: f64,
    pub axis: Axis,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            slab_thickness: 4,
            threshold: 0.5,
            axis: Axis::Z,
        }
    }
}

/// Simulates thick-slice acquisition: occupancy is averaged over each slab
/// of `slab_thickness` voxels along `axis`, written back to every voxel of
/// the slab and re-binarized (`mean >= threshold`).
pub fn degrade_thick_slice(hq: &VoxelGrid, p: &DegradeParams) -> Result<VoxelGrid> {
    let ax = p.axis.index();
    let depth = hq.dims[ax];
    if p.slab_thickness == 0 || p.slab_thickness > depth || !depth.is_multiple_of(p.slab_thickness) {
        return Err(contract(format!(
            "slab thickness {} must divide the through-plane size {depth}",
            p.slab_thickness
        )));
    }
    if !(p.threshold > 0.0 && p.threshold < 1.0) {
        return Err(contract(format!("threshold {} outside (0, 1)", p.threshold)));
    }
    let mut out = hq.clone();
    let [dx, dy, dz] = hq.dims;
    let stride = [1, dx, dx * dy][ax];
    let plane: Vec<usize> = (0..dz)
        .flat_map(|z| (0..dy).flat_map(move |y| (0..dx).map(move |x| [x, y, z])))
        .filter(|c| c[ax] == 0)
        .map(|c| hq.index(c[0], c[1], c[2]))
        .collect();
    for base in plane {
        for slab in (0..depth).step_by(p.slab_thickness) {
            let idx = |k: usize| base + (slab + k) * stride;
            let on = (0..p.slab_thickness).filter(|&k| hq.occupancy[idx(k)]).count();
            let v = on as f64 / p.slab_thickness as f64 >= p.threshold;
            for k in 0..p.slab_thickness {
                out.occupancy[idx(k)] = v;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Disc,
    Cross,
    Ring,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Disc, ShapeClass::Cross, ShapeClass::Ring];
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeImage {
    pub class: ShapeClass,
    pub size: usize,
    /// Row-major pixels in `{0, 1}`.
    pub pixels: Vec<f64>,
}

pub const IMAGE_SIZE: usize = 28;

/// `n` binary 28x28 images cycling through discs, crosses and rings with
/// random position and size jitter.
pub fn gen_2d_shapes(n: usize, seed: u64) -> Vec<ShapeImage> {
    let root = Rng::with_stream(seed, 2);
    (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let class = ShapeClass::ALL[i % 3];
            render_shape(class, IMAGE_SIZE, &mut rng)
        })
        .collect()
}

fn render_shape(class: ShapeClass, size: usize, rng: &mut Rng) -> ShapeImage {
    let half = size as f64 / 2.0;
    let cx = half + rng.uniform_in(-3.0, 3.0);
    let cy = half + rng.uniform_in(-3.0, 3.0);
    let r = rng.uniform_in(6.0, 10.0);
    let arm = rng.uniform_in(1.5, 3.0);
    let inner = r * rng.uniform_in(0.45, 0.65);
    let mut pixels = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let (dx, dy) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            let on = match class {
                ShapeClass::Disc => d <= r,
                ShapeClass::Ring => d <= r && d >= inner,
                ShapeClass::Cross => {
                    (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
                }
            };
            if on {
                pixels[row * size + col] = 1.0;
            }
        }
    }
    ShapeImage {
        class,
        size,
        pixels,
    }
}

/// Seeded shuffle split into `(train, test)` with
/// `round(fraction * n)` training items.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(contract(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n_train = (train_fraction * items.len() as f64).round() as usize;
    if n_train == 0 || n_train == items.len() {
        return Err(contract(format!(
            "split of {} items at {train_fraction} leaves one side empty",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    Rng::with_stream(seed, 3).shuffle(&mut order);
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}
