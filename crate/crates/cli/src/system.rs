//! System files: a TOML document holding either a raw system `(r, B)` or a
//! normalized interaction matrix `A`.
//!
//! ```toml
//! name = "example"
//! n = 3
//! r = [1, 3, "19/6"]
//! B = [[-1, 0, 9], [-1, -1, 0], [-1, -1, -1]]
//! ```
//!
//! Entries may be TOML numbers or strings holding a decimal (`"0.25"`,
//! `"1e-3"`) or an exact rational (`"19/6"`). For raw systems the equilibrium
//! and `A = B diag(y*)` are computed exactly from the entries as written and
//! rounded once to the nearest double.

use lvcert_core::model::{find_interior_equilibrium, normalize, ModelError};
use lvcert_core::{InteriorEquilibrium, LvSystem, Matrix, Vector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed system file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("bad number {text:?}: {reason}")]
    Number { text: String, reason: String },
    #[error("invalid system: {0}")]
    Shape(String),
}

/// A matrix or vector entry as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Entry {
    pub fn value(&self) -> Result<f64, SystemFileError> {
        match self {
            Entry::Int(i) => Ok(*i as f64),
            Entry::Float(x) => Ok(*x),
            Entry::Text(s) => parse_number(s),
        }
    }

    /// The entry as an exact rational (floats are taken at their binary value).
    pub fn exact(&self) -> Result<BigRational, SystemFileError> {
        match self {
            Entry::Int(i) => Ok(BigRational::from_integer(BigInt::from(*i))),
            Entry::Float(x) => BigRational::from_float(*x).ok_or_else(|| SystemFileError::Number {
                text: x.to_string(),
                reason: "not finite".into(),
            }),
            Entry::Text(s) => parse_rational(s),
        }
    }
}

impl From<f64> for Entry {
    fn from(x: f64) -> Self {
        Entry::Float(x)
    }
}

/// Parses a decimal (`-1.25e-3`) or `p/q` rational string exactly.
pub fn parse_rational(text: &str) -> Result<BigRational, SystemFileError> {
    let err = |reason: &str| SystemFileError::Number {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let num: BigInt = num.trim().parse().map_err(|_| err("numerator is not an integer"))?;
        let den: BigInt = den.trim().parse().map_err(|_| err("denominator is not an integer"))?;
        if den.is_zero() {
            return Err(err("zero denominator"));
        }
        return Ok(BigRational::new(num, den));
    }
    let (mantissa, exponent) = match t.find(['e', 'E']) {
        Some(pos) => {
            let e: i32 = t[pos + 1..].parse().map_err(|_| err("bad exponent"))?;
            (&t[..pos], e)
        }
        None => (t, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(err("not a number"));
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(all_digits.parse::<BigInt>().map_err(|_| err("not a number"))?);
    let scale = exponent - frac_part.len() as i32;
    if scale.unsigned_abs() > 400 {
        return Err(err("exponent out of range"));
    }
    let ten = BigRational::from_integer(BigInt::from(10));
    let power = num_traits::pow(ten, scale.unsigned_abs() as usize);
    value = if scale >= 0 { value * power } else { value / power };
    Ok(if negative { -value } else { value })
}

/// Parses a decimal or `p/q` rational string to the nearest double.
pub fn parse_number(text: &str) -> Result<f64, SystemFileError> {
    let value = parse_rational(text)?
        .to_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SystemFileError::Number {
            text: text.to_string(),
            reason: "out of range".into(),
        })?;
    Ok(value)
}

/// Shortest decimal string that parses back to the same double.
pub fn format_number(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Entry>>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<Entry>>>,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<Entry>>>,
}

/// The data of a system file after parsing and shape checks.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemData {
    Raw(LvSystem),
    Normalized(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSystem {
    pub name: String,
    pub data: SystemData,
    /// Exact `(r, B)` as written, for raw systems.
    exact: Option<(Vec<BigRational>, Vec<Vec<BigRational>>)>,
}

fn to_vector(entries: &[Entry], n: usize, what: &str) -> Result<Vector, SystemFileError> {
    if entries.len() != n {
        return Err(SystemFileError::Shape(format!(
            "{what} has length {}, expected {n}",
            entries.len()
        )));
    }
    let values = entries.iter().map(Entry::value).collect::<Result<Vec<_>, _>>()?;
    Ok(Vector::from_vec(values))
}

fn to_matrix(rows: &[Vec<Entry>], n: usize, what: &str) -> Result<Matrix, SystemFileError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(SystemFileError::Shape(format!("{what} must be {n}x{n}")));
    }
    let mut m = Matrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = e.value()?;
        }
    }
    Ok(m)
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self, SystemFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, SystemFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| SystemFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn from_raw(name: &str, r: &Vector, b: &Matrix) -> Self {
        Self {
            name: Some(name.to_string()),
            notes: None,
            n: r.len(),
            r: Some(r.iter().map(|&x| x.into()).collect()),
            b: Some(rows_of(b)),
            a: None,
        }
    }

    pub fn from_normalized(name: &str, a: &Matrix) -> Self {
        Self {
            name: Some(name.to_string()),
            notes: None,
            n: a.nrows(),
            r: None,
            b: None,
            a: Some(rows_of(a)),
        }
    }

    pub fn load(&self) -> Result<LoadedSystem, SystemFileError> {
        let n = self.n;
        if n == 0 {
            return Err(SystemFileError::Shape("n must be at least 1".into()));
        }
        let mut exact = None;
        let data = match (&self.r, &self.b, &self.a) {
            (Some(r_entries), Some(b_entries), None) => {
                let r = to_vector(r_entries, n, "r")?;
                let b = to_matrix(b_entries, n, "B")?;
                let r_exact = r_entries.iter().map(Entry::exact).collect::<Result<Vec<_>, _>>()?;
                let b_exact = b_entries
                    .iter()
                    .map(|row| row.iter().map(Entry::exact).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?;
                exact = Some((r_exact, b_exact));
                SystemData::Raw(LvSystem::new(r, b).map_err(|e| SystemFileError::Shape(e.to_string()))?)
            }
            (None, None, Some(a)) => SystemData::Normalized(to_matrix(a, n, "A")?),
            _ => {
                return Err(SystemFileError::Shape(
                    "give either both r and B, or A alone".into(),
                ))
            }
        };
        Ok(LoadedSystem {
            name: self.name.clone().unwrap_or_else(|| "unnamed".into()),
            data,
            exact,
        })
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<Entry>> {
    m.row_iter()
        .map(|row| row.iter().map(|&x| x.into()).collect())
        .collect()
}

impl LoadedSystem {
    pub fn dim(&self) -> usize {
        match &self.data {
            SystemData::Raw(s) => s.dim(),
            SystemData::Normalized(a) => a.nrows(),
        }
    }

    /// Interior equilibrium in the original coordinates; `1` for a file that
    /// already gives `A`.
    ///
    /// Conditioning and positivity are judged by the floating-point solver;
    /// when it accepts, the value reported is the exact rational solution of
    /// the system as written, rounded once.
    pub fn equilibrium(&self) -> Result<InteriorEquilibrium, ModelError> {
        Ok(self.solve()?.0)
    }

    /// `A = B diag(y*)`, or the given `A`. For raw systems each entry is the
    /// exact product rounded once.
    pub fn normalized(&self) -> Result<(Matrix, InteriorEquilibrium), ModelError> {
        let (eq, exact_y) = self.solve()?;
        let a = match (&self.data, &self.exact, exact_y) {
            (SystemData::Raw(_), Some((_, b)), Some(y)) => {
                let n = y.len();
                Matrix::from_fn(n, n, |i, j| (&b[i][j] * &y[j]).to_f64().unwrap_or(f64::NAN))
            }
            (SystemData::Raw(s), _, _) => normalize(s, &eq)?.into_matrix(),
            (SystemData::Normalized(a), _, _) => a.clone(),
        };
        Ok((a, eq))
    }

    fn solve(&self) -> Result<(InteriorEquilibrium, Option<Vec<BigRational>>), ModelError> {
        match &self.data {
            SystemData::Raw(s) => {
                let eq = find_interior_equilibrium(s)?;
                let exact = self.exact.as_ref().and_then(|(r, b)| exact_solve(b, r));
                match exact {
                    Some(y) => {
                        let rounded = y.iter().map(|v| v.to_f64().unwrap_or(f64::NAN));
                        let eq = InteriorEquilibrium::new(Vector::from_iterator(y.len(), rounded))?;
                        Ok((eq, Some(y)))
                    }
                    None => Ok((eq, None)),
                }
            }
            SystemData::Normalized(a) => Ok((
                InteriorEquilibrium::new(Vector::from_element(a.nrows(), 1.0))?,
                None,
            )),
        }
    }
}

/// Largest dimension solved in exact arithmetic.
const EXACT_MAX_DIM: usize = 12;

/// Solves `B y = -r` over the rationals; `None` if `B` is singular or large.
fn exact_solve(b: &[Vec<BigRational>], r: &[BigRational]) -> Option<Vec<BigRational>> {
    let n = r.len();
    if n > EXACT_MAX_DIM {
        return None;
    }
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row = b[i].clone();
            row.push(-r[i].clone());
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&i| !m[i][col].is_zero())?;
        m.swap(col, pivot);
        let inv = BigRational::one() / &m[col][col];
        for v in m[col].iter_mut().skip(col) {
            *v = &*v * &inv;
        }
        let pivot_row = m[col].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != col && !row[col].is_zero() {
                let factor = row[col].clone();
                for (dst, src) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *dst -= &factor * src;
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[n].clone()).collect())
}

/// Parses a comma-separated list of numbers such as `0.5,2,3/2`.
pub fn parse_list(text: &str) -> Result<Vector, SystemFileError> {
    let values = text
        .split(',')
        .map(parse_number)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Vector::from_vec(values))
}
