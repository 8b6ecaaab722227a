//! Aggregating pixel features into per-joint vectors.

use parelab_numerics::{Tape, Tensor, Var};

use crate::error::{shape_err, Result};

fn check(tape: &Tape, parts: Var, feats: Var, op: &'static str) -> Result<(usize, usize, usize, usize, usize)> {
    let ps = tape.shape(parts).to_vec();
    let fs = tape.shape(feats).to_vec();
    if ps.len() != 4 || fs.len() != 4 || ps[0] != fs[0] || ps[2..] != fs[2..] || ps[1] < 2 {
        return Err(shape_err(op, format!("part logits {ps:?} and features {fs:?} must share N, H, W")));
    }
    Ok((ps[0], ps[1] - 1, fs[1], ps[2], ps[3]))
}

/// Per-joint spatial softmax of the part logits with the background channel
/// dropped: [N,J+1,H,W] → [N,J,H·W].
pub fn spatial_attention(tape: &mut Tape, parts: Var) -> Result<Var> {
    let s = tape.shape(parts).to_vec();
    if s.len() != 4 || s[1] < 2 {
        return Err(shape_err("spatial_attention", format!("expected [N,J+1,H,W], got {s:?}")));
    }
    let fg = tape.narrow(parts, 1, 1, s[1] - 1)?;
    let flat = tape.reshape(fg, &[s[0], s[1] - 1, s[2] * s[3]])?;
    Ok(tape.softmax(flat, 2)?)
}

/// `F'_j = Σ_{h,w} softmax(P_j)_{h,w} · F_{:,h,w}`, returned as ([N,J,C], attention [N,J,H·W]).
pub fn attention_fuse(tape: &mut Tape, parts: Var, feats: Var) -> Result<(Var, Var)> {
    let (n, _, c, h, w) = check(tape, parts, feats, "attention_fuse")?;
    let att = spatial_attention(tape, parts)?;
    let f = tape.reshape(feats, &[n, c, h * w])?;
    let f = tape.permute(f, &[0, 2, 1])?;
    Ok((tape.bmm(att, f)?, att))
}

/// Soft-argmax location of each attention map, then a bilinear sample of the
/// features there: ([N,J,C], attention [N,J,H·W]).
pub fn pooling_fuse(tape: &mut Tape, parts: Var, feats: Var) -> Result<(Var, Var)> {
    let (n, j, _, h, w) = check(tape, parts, feats, "pooling_fuse")?;
    let att = spatial_attention(tape, parts)?;
    let grid = tape.constant(Tensor::from_fn([h * w, 2], |i| {
        let p = i / 2;
        if i % 2 == 0 {
            (p % w) as f64
        } else {
            (p / w) as f64
        }
    }));
    let flat = tape.reshape(att, &[n * j, h * w])?;
    let loc = tape.matmul(flat, grid)?;
    // the sampling location is a hard keypoint choice: no gradient reaches the part logits
    let loc = tape.value(loc).clone().reshape(vec![n, j, 2])?;
    let loc = tape.constant(loc);
    Ok((tape.bilinear_sample(feats, loc)?, att))
}
