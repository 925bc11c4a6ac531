//! `TOLH` head checkpoints.
//!
//! ```text
//! "TOLH" u8 version=1 u8 kind
//! kind 0 (regression): u16 in_dim, u16 out_dim, u8 grad_rule, u8 use_bias
//! kind 1 (softmax):    u8 k, u8 d, u8 reserved=0, u8 use_bias
//! f32 alpha, weights row-major, bias
//! ```

use crate::codec::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::head::{GradRule, RegressionHead, SoftmaxHead};
use crate::model::FORMAT_VERSION;
use crate::numeric::RealMat;

pub const HEAD_MAGIC: &[u8; 4] = b"TOLH";

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Regression(RegressionHead),
    Softmax(SoftmaxHead),
}

impl Head {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(HEAD_MAGIC);
        out.push(FORMAT_VERSION);
        let (weights, bias, alpha) = match self {
            Head::Regression(h) => {
                out.push(0);
                out.extend_from_slice(&(h.in_dim() as u16).to_le_bytes());
                out.extend_from_slice(&(h.out_dim() as u16).to_le_bytes());
                out.push(h.rule().code());
                out.push(h.uses_bias() as u8);
                (h.weights(), h.bias(), h.alpha())
            }
            Head::Softmax(h) => {
                out.push(1);
                out.push(h.classes() as u8);
                out.push(h.features() as u8);
                out.push(0);
                out.push(h.uses_bias() as u8);
                (h.weights(), h.bias(), h.alpha())
            }
        };
        put_f32s(&mut out, &[alpha]);
        put_f32s(&mut out, weights.as_slice());
        put_f32s(&mut out, bias);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(HEAD_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let kind_at = r.offset();
        let kind = r.u8()?;
        let dims_at = r.offset();
        let (rows, cols, rule) = match kind {
            0 => {
                let in_dim = r.u16()? as usize;
                let out_dim = r.u16()? as usize;
                let rule_at = r.offset();
                let code = r.u8()?;
                let rule = GradRule::from_code(code)
                    .ok_or_else(|| r.error(rule_at, format!("unknown gradient rule code {code}")))?;
                (out_dim, in_dim, Some(rule))
            }
            1 => {
                let k = r.u8()? as usize;
                let d = r.u8()? as usize;
                if r.u8()? != 0 {
                    return Err(r.error(dims_at + 2, "reserved byte must be zero"));
                }
                (k, d, None)
            }
            other => return Err(r.error(kind_at, format!("unknown head kind {other}"))),
        };
        if rows == 0 || cols == 0 {
            return Err(r.error(dims_at, "head has a zero dimension"));
        }
        let bias_flag_at = r.offset();
        let use_bias = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(r.error(bias_flag_at, format!("bias flag must be 0 or 1, got {other}"))),
        };
        let alpha = r.f32()?;
        let weights = r.f32_vec(rows * cols)?;
        let bias = r.f32_vec(rows)?;
        r.finish()?;
        let invalid = |e: Error| Error::Format {
            offset: dims_at,
            message: e.to_string(),
        };
        let weights = RealMat::from_vec(rows, cols, weights).map_err(invalid)?;
        Ok(match rule {
            Some(rule) => {
                Head::Regression(RegressionHead::from_parts(weights, bias, alpha, rule, use_bias).map_err(invalid)?)
            }
            None => Head::Softmax(SoftmaxHead::from_parts(weights, bias, alpha, use_bias).map_err(invalid)?),
        })
    }
}

pub fn load_head(bytes: &[u8]) -> Result<Head> {
    Head::from_bytes(bytes)
}
