//! Coefficient vectors and their text dump.
//!
//! The dump is `dofvec <n>` followed by one coefficient per line in C99
//! hexadecimal float notation (`0x1.8p+1`), which round-trips exactly. Lines
//! starting with `#` are comments.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::space::FeSpace;

#[derive(Debug, Clone)]
pub struct DofVector {
    pub space: Arc<FeSpace>,
    pub values: Vec<f64>,
}

impl DofVector {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_dofs() {
            return Err(Error::DofFormat(format!(
                "{} coefficients for a space with {} dofs",
                values.len(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, values })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn format_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    let esign = if e >= 0 { "+" } else { "-" };
    format!("{sign}0x{lead}{frac}p{esign}{}", e.abs())
}

pub fn parse_hex(s: &str) -> Option<f64> {
    let s = s.trim();
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
    let (mantissa, exp) = rest.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() || frac.len() > 13 {
        return None;
    }
    let lead = u64::from_str_radix(int, 16).ok()?;
    let mut f = 0u64;
    if !frac.is_empty() {
        f = u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()));
    }
    let bits = match lead {
        1 => {
            let e = exp + 1023;
            if !(1..=2046).contains(&e) {
                return None;
            }
            ((e as u64) << 52) | f
        }
        0 if exp == -1022 || f == 0 => f,
        _ => return None,
    };
    let v = f64::from_bits(bits);
    Some(if neg { -v } else { v })
}

pub fn dump(values: &[f64], header: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(s, "dofvec {}", values.len());
    for &v in values {
        s.push_str(&format_hex(v));
        s.push('\n');
    }
    s
}

pub fn load(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::DofFormat("empty file".into()))?;
    let n: usize = head
        .strip_prefix("dofvec ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::DofFormat(format!("bad header `{head}`")))?;
    let values: Vec<f64> = lines
        .map(|l| parse_hex(l).ok_or_else(|| Error::DofFormat(format!("bad coefficient `{l}`"))))
        .collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::DofFormat(format!("expected {n} coefficients, found {}", values.len())));
    }
    Ok(values)
}
