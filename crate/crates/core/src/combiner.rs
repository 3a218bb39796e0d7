//! Min-max normalization and multiplicative score fusion.

use thiserror::Error;

use crate::io::{fmt_f64, fmt_opt};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum CombineError {
    #[error("score vector is empty")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// `(v - min) / (max - min)`. A constant vector maps to all ones, so it acts
/// as a neutral factor in a product.
pub fn minmax_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>, CombineError> {
    if v.is_empty() {
        return Err(CombineError::Empty);
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(CombineError::NonFinite(i));
    }
    let lo = v.iter().copied().fold(T::infinity(), T::min);
    let hi = v.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    if span == T::zero() {
        return Ok(vec![T::one(); v.len()]);
    }
    // Clamp guards the endpoints against rounding outside [0, 1].
    Ok(v.iter().map(|&x| ((x - lo) / span).max(T::zero()).min(T::one())).collect())
}

/// Elementwise product of the normalized validation and OOD scores.
pub fn vsdr_scores<T: Scalar>(s: &[T], r: &[T]) -> Result<Vec<T>, CombineError> {
    combine_generic(s, r)
}

/// Same fusion with an arbitrary second score (e.g. a baseline).
pub fn combine_generic<T: Scalar>(s: &[T], b: &[T]) -> Result<Vec<T>, CombineError> {
    if s.len() != b.len() {
        return Err(CombineError::LengthMismatch(s.len(), b.len()));
    }
    let sn = minmax_normalize(s)?;
    let bn = minmax_normalize(b)?;
    Ok(sn.into_iter().zip(bn).map(|(x, y)| x * y).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub policy_id: String,
    pub s: f64,
    pub r: f64,
    pub s_norm: f64,
    pub r_norm: f64,
    pub vsdr: f64,
    pub opc: Option<f64>,
    pub soft_opc: Option<f64>,
}

/// Per-policy scores for one hyper-parameter cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub cell: String,
    pub rows: Vec<ScoreRow>,
}

pub const SCORE_TABLE_HEADER: &str = "policy_id,s,r,s_norm,r_norm,vsdr,opc,soft_opc";

impl ScoreTable {
    pub fn build(
        cell: impl Into<String>,
        ids: &[String],
        s: &[f64],
        r: &[f64],
        opc: Option<&[f64]>,
        soft_opc: Option<&[f64]>,
    ) -> Result<Self, CombineError> {
        for other in [Some(r), opc, soft_opc].into_iter().flatten() {
            if other.len() != ids.len() {
                return Err(CombineError::LengthMismatch(ids.len(), other.len()));
            }
        }
        if s.len() != ids.len() {
            return Err(CombineError::LengthMismatch(ids.len(), s.len()));
        }
        let s_norm = minmax_normalize(s)?;
        let r_norm = minmax_normalize(r)?;
        let rows = (0..ids.len())
            .map(|i| ScoreRow {
                policy_id: ids[i].clone(),
                s: s[i],
                r: r[i],
                s_norm: s_norm[i],
                r_norm: r_norm[i],
                vsdr: s_norm[i] * r_norm[i],
                opc: opc.map(|v| v[i]),
                soft_opc: soft_opc.map(|v| v[i]),
            })
            .collect();
        Ok(Self { cell: cell.into(), rows })
    }

    pub fn column(&self, f: impl Fn(&ScoreRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCORE_TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.policy_id,
                fmt_f64(r.s),
                fmt_f64(r.r),
                fmt_f64(r.s_norm),
                fmt_f64(r.r_norm),
                fmt_f64(r.vsdr),
                r.opc.map_or(String::new(), |v| fmt_opt(Some(v))),
                r.soft_opc.map_or(String::new(), |v| fmt_opt(Some(v))),
            ));
        }
        out
    }

    pub fn from_csv(cell: impl Into<String>, text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(SCORE_TABLE_HEADER) {
            return Err("missing score table header".into());
        }
        let parse = |t: &str| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
        let opt = |t: &str| if t.is_empty() || t == "NA" { Ok(None) } else { parse(t).map(Some) };
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 8 {
                    return Err(format!("expected 8 fields in `{l}`"));
                }
                Ok(ScoreRow {
                    policy_id: f[0].to_owned(),
                    s: parse(f[1])?,
                    r: parse(f[2])?,
                    s_norm: parse(f[3])?,
                    r_norm: parse(f[4])?,
                    vsdr: parse(f[5])?,
                    opc: opt(f[6])?,
                    soft_opc: opt(f[7])?,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { cell: cell.into(), rows })
    }
}
