//! Three-axis rotary coordinates for the latent-slot sequence.
//!
//! History slot `j` sits at time `j`. The three current views share time `i`
//! (the number of history slots) and are laid side by side along the width
//! axis: front at `w`, right at `w + W`, left at `w + 2W`. Future slot `m`
//! (1-based) sits at time `i + m` with the plain width index.

use std::str::FromStr;
use std::sync::Arc;

use navworld_numerics::{RopeTable, Scalar};
use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotRole {
    History(usize),
    Front,
    Right,
    Left,
    /// 1-based offset past the current step.
    Future(usize),
}

impl FromStr for SlotRole {
    type Err = ModelError;

    /// Accepts `front`, `left`, `right`, `history:J` and `future:M`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ModelError::UnknownRole(s.to_string());
        match s {
            "front" => return Ok(Self::Front),
            "left" => return Ok(Self::Left),
            "right" => return Ok(Self::Right),
            _ => {}
        }
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        match kind {
            "history" => Ok(Self::History(idx)),
            "future" if idx >= 1 => Ok(Self::Future(idx)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RopeCoord {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

/// Coordinates for every token of every slot, slots in the given order and
/// tokens row-major within a slot.
///
/// The layout must hold exactly one front slot, at most one left and one right
/// slot, history indices `0..k` and future offsets `1..=F`, each exactly once.
pub fn assign_rope_coords(roles: &[SlotRole], height: usize, width: usize) -> Result<Vec<RopeCoord>> {
    let count = |f: &dyn Fn(&SlotRole) -> bool| roles.iter().filter(|r| f(r)).count();
    let fronts = count(&|r| *r == SlotRole::Front);
    if fronts != 1 {
        return Err(ModelError::Layout(format!("expected exactly one front slot, found {fronts}")));
    }
    if count(&|r| *r == SlotRole::Left) > 1 || count(&|r| *r == SlotRole::Right) > 1 {
        return Err(ModelError::Layout("duplicate side view".into()));
    }
    let k = count(&|r| matches!(r, SlotRole::History(_)));
    let f = count(&|r| matches!(r, SlotRole::Future(_)));
    for j in 0..k {
        if count(&|r| *r == SlotRole::History(j)) != 1 {
            return Err(ModelError::Layout(format!("history indices must be 0..{k} exactly once")));
        }
    }
    for m in 1..=f {
        if count(&|r| *r == SlotRole::Future(m)) != 1 {
            return Err(ModelError::Layout(format!("future offsets must be 1..={f} exactly once")));
        }
    }

    let mut out = Vec::with_capacity(roles.len() * height * width);
    for role in roles {
        let (t, w_off) = match *role {
            SlotRole::History(j) => (j, 0),
            SlotRole::Front => (k, 0),
            SlotRole::Right => (k, width),
            SlotRole::Left => (k, 2 * width),
            SlotRole::Future(m) => (k + m, 0),
        };
        for h in 0..height {
            for w in 0..width {
                out.push(RopeCoord { t, h, w: w + w_off });
            }
        }
    }
    Ok(out)
}

/// Rotary pair counts `(t, h, w)` for a head dimension. Height and width get
/// `pairs / 3` each; time takes the remainder.
pub fn axis_pairs(head_dim: usize) -> Result<(usize, usize, usize)> {
    if !head_dim.is_multiple_of(2) || head_dim / 2 < 3 {
        return Err(ModelError::Config(format!(
            "head dimension {head_dim} cannot be split into three even rotary groups"
        )));
    }
    let pairs = head_dim / 2;
    let hw = pairs / 3;
    Ok((pairs - 2 * hw, hw, hw))
}

/// Rotation angle of every (token, pair), time pairs first, then height, then
/// width. Pair `j` of an axis with `n` pairs turns at `base^(-j/n)` per unit.
pub fn rope_angles(coords: &[RopeCoord], head_dim: usize, base: f64) -> Result<Vec<f64>> {
    let (pt, ph, pw) = axis_pairs(head_dim)?;
    let freqs = |n: usize| -> Vec<f64> { (0..n).map(|j| base.powf(-(j as f64) / n as f64)).collect() };
    let (ft, fh, fw) = (freqs(pt), freqs(ph), freqs(pw));
    let mut out = Vec::with_capacity(coords.len() * head_dim / 2);
    for c in coords {
        out.extend(ft.iter().map(|f| c.t as f64 * f));
        out.extend(fh.iter().map(|f| c.h as f64 * f));
        out.extend(fw.iter().map(|f| c.w as f64 * f));
    }
    Ok(out)
}

pub fn rope_table<T: Scalar>(coords: &[RopeCoord], head_dim: usize, base: f64) -> Result<Arc<RopeTable<T>>> {
    let angles = rope_angles(coords, head_dim, base)?;
    Ok(Arc::new(RopeTable::from_angles(coords.len(), head_dim / 2, &angles)))
}
