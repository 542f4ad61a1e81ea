use super::SkeletonSequence;

/// Resamples to exactly `t_out` frames by linear interpolation of the frame
/// index onto `[0, T_raw - 1]`. Per-frame labels use the nearest source frame.
pub fn temporal_resample(seq: &SkeletonSequence, t_out: usize) -> SkeletonSequence {
    assert!(t_out >= 1, "target length must be positive");
    let t_raw = seq.len();
    if t_out == t_raw {
        return seq.clone();
    }
    let frame = seq.dims().len() / t_raw;
    let mut data = Vec::with_capacity(t_out * frame);
    let mut labels = seq.frame_labels.as_ref().map(|_| Vec::with_capacity(t_out));
    for i in 0..t_out {
        let pos = source_position(i, t_out, t_raw);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t_raw - 1);
        let w = pos - lo as f64;
        let (a, b) = (seq.frame(lo), seq.frame(hi));
        if w == 0.0 {
            data.extend_from_slice(a);
        } else {
            data.extend(a.iter().zip(b).map(|(x, y)| x + w * (y - x)));
        }
        if let (Some(out), Some(src)) = (labels.as_mut(), seq.frame_labels.as_ref()) {
            out.push(src[(pos.round() as usize).min(t_raw - 1)]);
        }
    }
    let mut out = seq.with_frames(t_out, data);
    out.frame_labels = labels;
    out
}

pub(crate) fn source_position(i: usize, t_out: usize, t_raw: usize) -> f64 {
    if t_out == 1 {
        0.0
    } else {
        i as f64 * (t_raw - 1) as f64 / (t_out - 1) as f64
    }
}
