//! Periodic voxel unit cells.
//!
//! Voxel `(i, j, k)` of an `n³` cell occupies `[i/n, (i+1)/n) × …` and is
//! stored at `i + n (j + n k)` (x fastest). Parametric shapes are voxelized by
//! sampling voxel centers, so slabs with fraction `k/n` are exact.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Axis::ALL.get(i).copied()
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::invalid(format!("unknown axis '{s}' (expected x, y or z)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    Pore,
    Crack,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Pore => "PORE",
            Scale::Crack => "CRACK",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fluid,
    Solid,
}

/// Non-empty set of axes, written as a string such as `"x"` or `"xz"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisSet([bool; 3]);

impl AxisSet {
    pub fn single(axis: Axis) -> Self {
        let mut s = [false; 3];
        s[axis.index()] = true;
        AxisSet(s)
    }

    pub fn contains(&self, axis: Axis) -> bool {
        self.0[axis.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|a| self.contains(*a))
    }
}

impl FromStr for AxisSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut set = [false; 3];
        for c in s.chars() {
            set[c.to_string().parse::<Axis>()?.index()] = true;
        }
        if !set.iter().any(|b| *b) {
            return Err(Error::invalid("empty axis set"));
        }
        Ok(AxisSet(set))
    }
}

impl fmt::Display for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.iter() {
            f.write_str(["x", "y", "z"][a.index()])?;
        }
        Ok(())
    }
}

impl Serialize for AxisSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AxisSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parametric fluid-region descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    /// Fluid where the coordinate along `axis` is below `fraction`.
    Slab { axis: Axis, fraction: f64 },
    /// Cylinders of radius `radius` through the cell center, one per listed
    /// axis; several axes give their union.
    Tube { axis: AxisSet, radius: f64 },
    /// Ball of radius `radius` at the cell center.
    Sphere { radius: f64 },
    /// Union of slabs, one per axis with a positive fraction.
    Plates { fractions: [f64; 3] },
    /// Labels read from a voxel file; its resolution must match.
    VoxelFile { path: PathBuf },
}

/// Periodic voxel grid with fluid/solid labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitCell {
    n: usize,
    fluid: Vec<bool>,
    scale: Scale,
}

impl UnitCell {
    pub fn new(n: usize, fluid: Vec<bool>, scale: Scale) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid(format!("cell resolution must be at least 4, got {n}")));
        }
        if fluid.len() != n * n * n {
            return Err(Error::invalid(format!(
                "label array has {} entries, expected {}",
                fluid.len(),
                n * n * n
            )));
        }
        Ok(Self { n, fluid, scale })
    }

    pub fn uniform(n: usize, phase: Phase, scale: Scale) -> Result<Self> {
        Self::new(n, vec![phase == Phase::Fluid; n * n * n], scale)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.fluid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluid.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    /// Label lookup with periodic wrap of signed indices.
    #[inline]
    pub fn is_fluid_wrapped(&self, i: isize, j: isize, k: isize) -> bool {
        let n = self.n as isize;
        self.fluid[self.index(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize, k.rem_euclid(n) as usize)]
    }

    #[inline]
    pub fn is_fluid(&self, idx: usize) -> bool {
        self.fluid[idx]
    }

    pub fn labels(&self) -> &[bool] {
        &self.fluid
    }

    pub fn phase_count(&self, phase: Phase) -> usize {
        let f = self.fluid.iter().filter(|b| **b).count();
        match phase {
            Phase::Fluid => f,
            Phase::Solid => self.len() - f,
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            n: self.n,
            fluid: self.fluid.iter().map(|b| !b).collect(),
            scale: self.scale,
        }
    }

    /// Cyclic shift of the voxel array by `s` along each axis.
    pub fn shifted(&self, s: [isize; 3]) -> Self {
        let n = self.n as isize;
        let mut fluid = vec![false; self.len()];
        for (idx, f) in fluid.iter_mut().enumerate() {
            let [i, j, k] = self.coords(idx).map(|c| c as isize);
            *f = self.is_fluid_wrapped((i - s[0]).rem_euclid(n), (j - s[1]).rem_euclid(n), (k - s[2]).rem_euclid(n));
        }
        Self { n: self.n, fluid, scale: self.scale }
    }

    /// Relabels axes: new axis `a` is old axis `perm[a]`.
    pub fn permuted(&self, perm: [usize; 3]) -> Self {
        let mut fluid = vec![false; self.len()];
        for (idx, f) in fluid.iter_mut().enumerate() {
            let new = self.coords(idx);
            let mut old = [0usize; 3];
            for a in 0..3 {
                old[perm[a]] = new[a];
            }
            *f = self.fluid[self.index(old[0], old[1], old[2])];
        }
        Self { n: self.n, fluid, scale: self.scale }
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = scale;
        self
    }

    /// Rejects cells whose solid phase cannot carry an elastic corrector
    /// problem. An all-solid cell is accepted.
    pub fn check_elastic_solid(&self) -> Result<()> {
        let solid = self.phase_count(Phase::Solid);
        if solid == 0 {
            return Err(Error::invalid(format!("{} cell has no solid phase", self.scale)));
        }
        let rep = connectivity(self, Phase::Solid);
        if rep.components != 1 || rep.percolates.iter().any(|p| !p) {
            return Err(Error::invalid(format!(
                "{} cell solid phase must be one periodic component percolating along x, y and z \
                 (found {} components, percolation {:?})",
                self.scale, rep.components, rep.percolates
            )));
        }
        Ok(())
    }

    pub fn write_voxel_file(&self, path: &Path) -> Result<()> {
        let mut buf = format!("poroscale-cell v1 {} {}\n", self.n, self.scale).into_bytes();
        buf.extend(self.fluid.iter().map(|f| if *f { b'1' } else { b'0' }));
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a voxel file. Body bytes may be ASCII `'0'`/`'1'` or raw
    /// `0`/`1`; ASCII whitespace between labels is skipped.
    pub fn read_voxel_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::invalid(format!("{}: malformed voxel header '{}'", path.display(), header.trim_end()));
        if parts.len() != 4 || parts[0] != "poroscale-cell" || parts[1] != "v1" {
            return Err(bad());
        }
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        let scale = match parts[3] {
            "PORE" => Scale::Pore,
            "CRACK" => Scale::Crack,
            _ => return Err(bad()),
        };
        let mut body = Vec::new();
        reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let mut fluid = Vec::with_capacity(n * n * n);
        for &b in &body {
            match b {
                b'1' | 1 => fluid.push(true),
                b'0' | 0 => fluid.push(false),
                b' ' | b'\n' | b'\r' | b'\t' => {}
                other => {
                    return Err(Error::invalid(format!(
                        "{}: invalid voxel byte 0x{other:02x}",
                        path.display()
                    )))
                }
            }
        }
        UnitCell::new(n, fluid, scale).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

/// Voxelizes `spec` at resolution `n`.
pub fn build_cell(spec: &ShapeSpec, n: usize, scale: Scale) -> Result<UnitCell> {
    if n < 4 {
        return Err(Error::invalid(format!("cell resolution must be at least 4, got {n}")));
    }
    let check_fraction = |f: f64, what: &str| {
        if !(0.0..=1.0).contains(&f) || !f.is_finite() {
            Err(Error::invalid(format!("{what} must lie in [0, 1], got {f}")))
        } else {
            Ok(())
        }
    };
    let check_radius = |r: f64| {
        if !(r >= 0.0 && r.is_finite()) {
            Err(Error::invalid(format!("radius must be finite and non-negative, got {r}")))
        } else {
            Ok(())
        }
    };
    let inside: Box<dyn Fn([f64; 3]) -> bool> = match spec {
        ShapeSpec::Slab { axis, fraction } => {
            check_fraction(*fraction, "slab fraction")?;
            let (a, f) = (axis.index(), *fraction);
            Box::new(move |c| c[a] < f)
        }
        ShapeSpec::Tube { axis, radius } => {
            check_radius(*radius)?;
            let axes: Vec<usize> = axis.iter().map(Axis::index).collect();
            let r2 = radius * radius;
            Box::new(move |c| {
                axes.iter().any(|&a| {
                    (0..3)
                        .filter(|&d| d != a)
                        .map(|d| (c[d] - 0.5) * (c[d] - 0.5))
                        .sum::<f64>()
                        < r2
                })
            })
        }
        ShapeSpec::Sphere { radius } => {
            check_radius(*radius)?;
            let r2 = radius * radius;
            Box::new(move |c| c.iter().map(|x| (x - 0.5) * (x - 0.5)).sum::<f64>() < r2)
        }
        ShapeSpec::Plates { fractions } => {
            for f in fractions {
                check_fraction(*f, "plate fraction")?;
            }
            let fr = *fractions;
            Box::new(move |c| (0..3).any(|a| c[a] < fr[a]))
        }
        ShapeSpec::VoxelFile { path } => {
            let cell = UnitCell::read_voxel_file(path)?;
            if cell.n != n {
                return Err(Error::invalid(format!(
                    "{}: voxel file has resolution {}, configuration requests {n}",
                    path.display(),
                    cell.n
                )));
            }
            return Ok(cell.with_scale(scale));
        }
    };
    let h = 1.0 / n as f64;
    let fluid = (0..n * n * n)
        .map(|idx| {
            let c = [idx % n, (idx / n) % n, idx / (n * n)].map(|i| (i as f64 + 0.5) * h);
            inside(c)
        })
        .collect();
    UnitCell::new(n, fluid, scale)
}

/// Fluid volume fraction.
pub fn porosity(cell: &UnitCell) -> f64 {
    cell.phase_count(Phase::Fluid) as f64 / cell.len() as f64
}

/// `m = m_c + (1 − m_c) m_p`.
pub fn combined_porosity(m_p: f64, m_c: f64) -> Result<f64> {
    for (name, v) in [("m_p", m_p), ("m_c", m_c)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(m_c + (1.0 - m_c) * m_p)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    /// Whether the phase percolates along x, y, z.
    pub percolates: [bool; 3],
    pub components: usize,
}

impl ConnectivityReport {
    pub fn percolates_any(&self) -> bool {
        self.percolates.iter().any(|p| *p)
    }
}

/// Periodic component labelling of one phase; `None` for the other phase.
#[derive(Clone, Debug)]
pub struct Components {
    pub labels: Vec<Option<u32>>,
    pub count: usize,
    pub report: ConnectivityReport,
}

/// Periodic 6-neighbor flood fill. Each voxel is reached with an unwrapped
/// position; meeting an already visited voxel of the same component at a
/// different unwrapped position reveals a winding, i.e. percolation along
/// every axis in which the two positions differ.
pub fn components(cell: &UnitCell, phase: Phase) -> Components {
    let n = cell.n as i64;
    let want = phase == Phase::Fluid;
    let mut labels: Vec<Option<u32>> = vec![None; cell.len()];
    let mut unwrapped = vec![[0i64; 3]; cell.len()];
    let mut percolates = [false; 3];
    let mut count = 0usize;
    let mut queue = VecDeque::new();
    const STEPS: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

    for seed in 0..cell.len() {
        if cell.fluid[seed] != want || labels[seed].is_some() {
            continue;
        }
        let label = count as u32;
        count += 1;
        labels[seed] = Some(label);
        unwrapped[seed] = cell.coords(seed).map(|c| c as i64);
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            let p = unwrapped[v];
            for s in STEPS {
                let q = [p[0] + s[0], p[1] + s[1], p[2] + s[2]];
                let w = cell.index(q[0].rem_euclid(n) as usize, q[1].rem_euclid(n) as usize, q[2].rem_euclid(n) as usize);
                if cell.fluid[w] != want {
                    continue;
                }
                match labels[w] {
                    None => {
                        labels[w] = Some(label);
                        unwrapped[w] = q;
                        queue.push_back(w);
                    }
                    Some(_) => {
                        for a in 0..3 {
                            if unwrapped[w][a] != q[a] {
                                percolates[a] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Components {
        labels,
        count,
        report: ConnectivityReport { percolates, components: count },
    }
}

pub fn connectivity(cell: &UnitCell, phase: Phase) -> ConnectivityReport {
    components(cell, phase).report
}
