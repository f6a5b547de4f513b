//! Branin-Hoo test functions, their 4D sum extension, and fortified variants.
//!
//! A fortified function subtracts `A * bump(r)` from the base function, where
//! `bump` is the compactly supported radial function
//! `exp(-1 / (1 - (eps * r)^2))` for `r < 1/eps` and zero elsewhere. Placed on
//! one of several equal-valued optima, the bump turns that optimum into the
//! unique global minimum without moving it.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};

/// The three minimizers of the 2D Branin-Hoo function, stored at the
/// customary printed precision.
pub const BRANIN_OPTIMA: [[f64; 2]; 3] = [[-PI, 12.275], [PI, 2.275], [9.42478, 2.475]];

/// Value of the Branin-Hoo function at each of its minimizers.
pub const BRANIN_MIN_VALUE: f64 = 0.397887;

/// Bump amplitude used for the built-in fortified 2D function.
pub const FORTIFIED_2D_AMPLITUDE: f64 = 10.0;
/// Bump amplitude used for each of the two bumps of the fortified 4D function.
pub const FORTIFIED_4D_AMPLITUDE: f64 = 5.0;
/// Bump width parameter for all built-in fortified functions.
pub const DEFAULT_BUMP_EPSILON: f64 = 1.0;

/// Branin-Hoo function with the standard constants.
pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    let q = x2 - b * x1 * x1 + c * x1 - r;
    q * q + s * (1.0 - t) * x1.cos() + s
}

/// Double Branin-Hoo: `branin(x1, x2) + branin(x3, x4)`.
pub fn branin4(x: &[f64]) -> Result<f64> {
    if x.len() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: x.len(),
        });
    }
    Ok(branin(x[0], x[1]) + branin(x[2], x[3]))
}

/// Compact-support bump `exp(-1 / (1 - (eps r)^2))`, zero for `r >= 1/eps`.
pub fn bump(r: f64, epsilon: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::arg(format!("bump radius must be >= 0, got {r}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::arg(format!("bump epsilon must be > 0, got {epsilon}")));
    }
    Ok(bump_unchecked(r, epsilon))
}

#[inline]
fn bump_unchecked(r: f64, epsilon: f64) -> f64 {
    let er = epsilon * r;
    if er >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - er * er)).exp()
    }
}

/// A bump subtracted from a host function.
///
/// `axes` selects the coordinates the radial distance is measured in; for the
/// 4D function a bump lives in the 2D subspace of one Branin-Hoo term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub axes: Vec<usize>,
    pub amplitude: f64,
    pub epsilon: f64,
}

impl BumpSpec {
    /// Bump measured over the leading `center.len()` coordinates.
    pub fn new(center: Vec<f64>, amplitude: f64, epsilon: f64) -> Result<Self> {
        let axes = (0..center.len()).collect();
        BumpSpec::on_axes(axes, center, amplitude, epsilon)
    }

    pub fn on_axes(axes: Vec<usize>, center: Vec<f64>, amplitude: f64, epsilon: f64) -> Result<Self> {
        if axes.len() != center.len() || axes.is_empty() {
            return Err(Error::arg("bump axes and center must be non-empty and equal length"));
        }
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::arg(format!("bump amplitude must be >= 0, got {amplitude}")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::arg(format!("bump epsilon must be > 0, got {epsilon}")));
        }
        Ok(BumpSpec {
            center,
            axes,
            amplitude,
            epsilon,
        })
    }

    /// Radial distance from the bump center, in the bump's own subspace.
    pub fn radius(&self, x: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(&self.center)
            .map(|(&a, c)| (x[a] - c) * (x[a] - c))
            .sum::<f64>()
            .sqrt()
    }

    /// The depth `amplitude * bump(radius)` this bump removes at `x`.
    pub fn depth(&self, x: &[f64]) -> f64 {
        self.amplitude * bump_unchecked(self.radius(x), self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Branin2,
    Branin4,
    /// `sum (x_i - 0.3)^2` on the unit box; a smoke-test objective.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumRecord {
    pub label: String,
    pub location: Vec<f64>,
    pub value: f64,
    pub is_global: bool,
}

/// A labeled objective with its domain, bumps, and optimum catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub name: String,
    pub family: Family,
    pub bounds: Bounds,
    pub bumps: Vec<BumpSpec>,
    pub optima: Vec<OptimumRecord>,
}

const SPHERE_CENTER: f64 = 0.3;

impl TestFunction {
    pub fn branin2() -> Self {
        let bounds = Bounds::from_pairs(&[(-5.0, 10.0), (0.0, 15.0)]).expect("static bounds");
        TestFunction::build("branin2", Family::Branin2, bounds, Vec::new())
    }

    pub fn branin4() -> Self {
        let bounds = Bounds::from_pairs(&[(-5.0, 10.0), (0.0, 15.0), (-5.0, 10.0), (0.0, 15.0)])
            .expect("static bounds");
        TestFunction::build("branin4", Family::Branin4, bounds, Vec::new())
    }

    pub fn sphere(dim: usize) -> Result<Self> {
        let bounds = Bounds::unit(dim)?;
        Ok(TestFunction::build(
            &format!("sphere{dim}"),
            Family::Sphere,
            bounds,
            Vec::new(),
        ))
    }

    /// 2D Branin-Hoo with an amplitude-10, width-1 bump on optimum `which` (1-based).
    pub fn branin2_fortified(which: usize) -> Result<Self> {
        let c = optimum_index(which)?;
        let bump = BumpSpec::new(BRANIN_OPTIMA[c].to_vec(), FORTIFIED_2D_AMPLITUDE, DEFAULT_BUMP_EPSILON)?;
        let mut f = fortify(&TestFunction::branin2(), vec![bump])?;
        f.name = format!("branin2-fortified-b{which}");
        Ok(f)
    }

    /// 4D double Branin-Hoo with amplitude-5 bumps on optimum `first` of
    /// `(x1, x2)` and optimum `second` of `(x3, x4)`.
    pub fn branin4_fortified(first: usize, second: usize) -> Result<Self> {
        let (i, j) = (optimum_index(first)?, optimum_index(second)?);
        let bumps = vec![
            BumpSpec::on_axes(vec![0, 1], BRANIN_OPTIMA[i].to_vec(), FORTIFIED_4D_AMPLITUDE, DEFAULT_BUMP_EPSILON)?,
            BumpSpec::on_axes(vec![2, 3], BRANIN_OPTIMA[j].to_vec(), FORTIFIED_4D_AMPLITUDE, DEFAULT_BUMP_EPSILON)?,
        ];
        let mut f = fortify(&TestFunction::branin4(), bumps)?;
        f.name = format!("branin4-fortified-b{first}{second}");
        Ok(f)
    }

    fn build(name: &str, family: Family, bounds: Bounds, bumps: Vec<BumpSpec>) -> Self {
        let mut f = TestFunction {
            name: name.to_string(),
            family,
            bounds,
            bumps,
            optima: Vec::new(),
        };
        f.optima = optimum_catalog(&f).expect("built-in family");
        f
    }

    pub fn dimension(&self) -> usize {
        self.bounds.dim()
    }

    /// Unfortified value. Callers guarantee `x.len() == self.dimension()`.
    pub fn base_value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension());
        match self.family {
            Family::Branin2 => branin(x[0], x[1]),
            Family::Branin4 => branin(x[0], x[1]) + branin(x[2], x[3]),
            Family::Sphere => x.iter().map(|v| (v - SPHERE_CENTER) * (v - SPHERE_CENTER)).sum(),
        }
    }

    /// Objective value. Callers guarantee `x.len() == self.dimension()`;
    /// use [`TestFunction::evaluate`] for a checked call.
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.base_value(x);
        for b in &self.bumps {
            let depth = b.depth(x);
            if depth != 0.0 {
                v -= depth;
            }
        }
        v
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.bounds.check_point(x)?;
        Ok(self.value(x))
    }

    pub fn global_value(&self) -> f64 {
        self.optima
            .iter()
            .map(|o| o.value)
            .fold(f64::INFINITY, f64::min)
    }

    /// Catalog labels in catalog order.
    pub fn labels(&self) -> Vec<String> {
        self.optima.iter().map(|o| o.label.clone()).collect()
    }
}

fn optimum_index(which: usize) -> Result<usize> {
    if (1..=3).contains(&which) {
        Ok(which - 1)
    } else {
        Err(Error::arg(format!("Branin-Hoo optimum index must be 1..=3, got {which}")))
    }
}

/// Return `base` with `bumps` subtracted, its optimum catalog rebuilt.
pub fn fortify(base: &TestFunction, bumps: Vec<BumpSpec>) -> Result<TestFunction> {
    for b in &bumps {
        for (&axis, &c) in b.axes.iter().zip(&b.center) {
            if axis >= base.dimension() {
                return Err(Error::arg(format!("bump axis {axis} outside dimension {}", base.dimension())));
            }
            if c < base.bounds.lower()[axis] || c > base.bounds.upper()[axis] {
                return Err(Error::arg(format!("bump center coordinate {c} on axis {axis} outside bounds")));
            }
        }
    }
    let mut f = base.clone();
    f.bumps.extend(bumps);
    f.name = format!("{}-fortified", base.name);
    f.optima = optimum_catalog(&f)?;
    Ok(f)
}

/// Values within this of the minimum share the global flag; absorbs the
/// truncation of the stored optimum coordinates.
const GLOBAL_TIE_TOLERANCE: f64 = 1e-6;

/// Labeled optima of a built-in family, valued under the function's bumps.
///
/// 2D records are `b1..b3`; 4D records are `bij`, pairing the i-th optimum of
/// `(x1, x2)` with the j-th optimum of `(x3, x4)`, in row-major order.
pub fn optimum_catalog(f: &TestFunction) -> Result<Vec<OptimumRecord>> {
    let locations: Vec<(String, Vec<f64>)> = match f.family {
        Family::Branin2 => BRANIN_OPTIMA
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("b{}", i + 1), p.to_vec()))
            .collect(),
        Family::Branin4 => {
            let mut v = Vec::with_capacity(9);
            for (i, p) in BRANIN_OPTIMA.iter().enumerate() {
                for (j, q) in BRANIN_OPTIMA.iter().enumerate() {
                    v.push((format!("b{}{}", i + 1, j + 1), vec![p[0], p[1], q[0], q[1]]));
                }
            }
            v
        }
        Family::Sphere => vec![("s1".to_string(), vec![SPHERE_CENTER; f.dimension()])],
    };
    if locations.iter().any(|(_, x)| x.len() != f.dimension()) {
        return Err(Error::UnsupportedFunction {
            name: f.name.clone(),
            known: registry_names().join(", "),
        });
    }
    let mut records: Vec<OptimumRecord> = locations
        .into_iter()
        .map(|(label, location)| {
            let value = f.value(&location);
            OptimumRecord {
                label,
                location,
                value,
                is_global: false,
            }
        })
        .collect();
    let min = records.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    for r in &mut records {
        r.is_global = r.value <= min + GLOBAL_TIE_TOLERANCE;
    }
    Ok(records)
}

/// Canonical registry names.
pub fn registry_names() -> Vec<&'static str> {
    vec![
        "branin2",
        "branin2-fortified",
        "branin2-fortified-b2",
        "branin2-fortified-b3",
        "branin4",
        "branin4-fortified",
        "branin4-fortified-b11",
        "branin4-fortified-b22",
        "sphere2",
    ]
}

/// Look up a function by registry name.
///
/// Besides the canonical names, `branin2-fortified-b{i}` and
/// `branin4-fortified-b{i}{j}` accept any optimum indices in `1..=3`.
pub fn lookup(name: &str) -> Result<TestFunction> {
    let unsupported = || Error::UnsupportedFunction {
        name: name.to_string(),
        known: registry_names().join(", "),
    };
    let digit = |c: u8| -> Option<usize> {
        match c {
            b'1'..=b'3' => Some((c - b'0') as usize),
            _ => None,
        }
    };
    match name {
        "branin2" => return Ok(TestFunction::branin2()),
        "branin4" => return Ok(TestFunction::branin4()),
        "branin2-fortified" => {
            let mut f = TestFunction::branin2_fortified(1)?;
            f.name = name.to_string();
            return Ok(f);
        }
        "branin4-fortified" => {
            let mut f = TestFunction::branin4_fortified(1, 1)?;
            f.name = name.to_string();
            return Ok(f);
        }
        _ => {}
    }
    if let Some(rest) = name.strip_prefix("sphere") {
        let dim: usize = rest.parse().map_err(|_| unsupported())?;
        if !(1..=8).contains(&dim) {
            return Err(unsupported());
        }
        return TestFunction::sphere(dim);
    }
    if let Some(rest) = name.strip_prefix("branin2-fortified-b") {
        if let [c] = rest.as_bytes() {
            let i = digit(*c).ok_or_else(unsupported)?;
            return TestFunction::branin2_fortified(i);
        }
    }
    if let Some(rest) = name.strip_prefix("branin4-fortified-b") {
        if let [a, b] = rest.as_bytes() {
            let i = digit(*a).ok_or_else(unsupported)?;
            let j = digit(*b).ok_or_else(unsupported)?;
            return TestFunction::branin4_fortified(i, j);
        }
    }
    Err(unsupported())
}

/// Evaluate `f` on a regular grid over its bounds.
///
/// Each free axis gets `resolution` evenly spaced values from lower to upper
/// inclusive; axes listed in `fixed` (0-based axis, value) are held constant.
/// Rows are `x1, ..., xd, f` with the first axis varying slowest.
pub fn grid(f: &TestFunction, resolution: usize, fixed: &[(usize, f64)]) -> Result<Vec<Vec<f64>>> {
    if resolution < 2 {
        return Err(Error::arg(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let d = f.dimension();
    for &(axis, _) in fixed {
        if axis >= d {
            return Err(Error::arg(format!("slice axis {} outside dimension {d}", axis + 1)));
        }
    }
    let free: Vec<usize> = (0..d).filter(|a| fixed.iter().all(|(b, _)| b != a)).collect();
    let axis_value = |axis: usize, k: usize| {
        let lo = f.bounds.lower()[axis];
        if k == resolution - 1 {
            f.bounds.upper()[axis]
        } else {
            lo + f.bounds.width(axis) * k as f64 / (resolution - 1) as f64
        }
    };
    let total = resolution.pow(free.len() as u32);
    let mut rows = Vec::with_capacity(total);
    let mut x = vec![0.0; d];
    for &(axis, v) in fixed {
        x[axis] = v;
    }
    for mut idx in 0..total {
        for &axis in free.iter().rev() {
            x[axis] = axis_value(axis, idx % resolution);
            idx /= resolution;
        }
        let mut row = x.clone();
        row.push(f.value(&x));
        rows.push(row);
    }
    Ok(rows)
}

/// Write grid rows as CSV with an `x1,...,xd,f` header.
pub fn write_grid_csv<W: Write>(f: &TestFunction, rows: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=f.dimension()).map(|i| format!("x{i}")).collect();
    header.push("f".into());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}
