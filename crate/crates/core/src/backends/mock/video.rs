//! Choreography for the mock video seats.

use std::collections::{BTreeMap, BTreeSet};

use image::RgbImage;
use thiserror::Error;

use super::world::{
    background, count_figures, draw_glyph, draw_statue, figure_color, locate, palette, scrub_figures, slot_bounds,
    slot_position, visibility, MockWorld,
};
use crate::backends::protocol::{CastMember, TauSummary, VisibilityMap, VisibilityTrack};
use crate::schema::Pose;
use crate::util::stable_hash;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VideoError {
    #[error("endpoint glyphs contradict the transition metadata: {0}")]
    TauMismatch(String),
    #[error("choreography needs {needed} px/frame for {name}, above the {limit} px/frame bound")]
    SpeedBound { name: String, needed: String, limit: String },
    #[error("frame_count must be at least 2, got {0}")]
    TooFewFrames(u32),
    #[error("first and last frames differ in size")]
    SizeMismatch,
    #[error("unparseable prompt: {0}")]
    Prompt(String),
}

type Track = Vec<(f64, f64)>;

fn tracks_to_map(tracks: &BTreeMap<String, Track>, g: u32, w: u32, h: u32) -> VisibilityMap {
    tracks
        .iter()
        .map(|(name, pts)| {
            let track = VisibilityTrack {
                visibility: pts.iter().map(|&(x, y)| visibility(x, y, g, w, h)).collect(),
                centroid: pts.iter().map(|&(x, y)| [x, y]).collect(),
            };
            (name.clone(), track)
        })
        .collect()
}

fn render(bg: &RgbImage, tracks: &BTreeMap<String, Track>, t: usize, g: u32) -> RgbImage {
    let mut frame = bg.clone();
    for (name, pts) in tracks {
        let (x, y) = pts[t];
        draw_glyph(&mut frame, x, y, g, palette(name));
    }
    frame
}

/// Pixels per frame for a pose, capped by the world's bound.
pub fn pose_speed(world: &MockWorld, pose: Pose) -> f64 {
    let s: f64 = match pose {
        Pose::Walking => 1.0,
        Pose::Running => 2.0,
        _ => 0.0,
    };
    s.min(world.s_max)
}

/// Animate a keyframe. Moving poses walk out towards the roomier side of
/// their slot and back, ending where they started; everything else holds
/// still, so every frame keeps the whole cast visible.
pub fn image_to_video(
    world: &MockWorld,
    keyframe: &RgbImage,
    cast: &[CastMember],
    frame_count: u32,
) -> Result<(Vec<RgbImage>, VisibilityMap), VideoError> {
    if frame_count < 2 {
        return Err(VideoError::TooFewFrames(frame_count));
    }
    let (w, h) = keyframe.dimensions();
    let g = world.glyph_size;
    let t_len = frame_count as usize;
    let mut cast: Vec<&CastMember> = cast.iter().collect();
    cast.sort_by(|a, b| a.name.cmp(&b.name));
    let found = locate(keyframe, cast.iter().map(|c| c.name.clone()), g);
    let mut tracks: BTreeMap<String, Track> = BTreeMap::new();
    for (slot, member) in cast.iter().enumerate() {
        let Some(&(x0, y0)) = found.get(&member.name) else { continue };
        let speed = pose_speed(world, member.pose);
        let (lo, hi) = slot_bounds(slot, cast.len(), w);
        let (min_x, max_x) = (lo + g as f64 / 2.0, hi - g as f64 / 2.0);
        let (room, dir) = if max_x - x0 >= x0 - min_x { ((max_x - x0).max(0.0), 1.0) } else { ((x0 - min_x).max(0.0), -1.0) };
        let last = (t_len - 1) as f64;
        let pts = (0..t_len)
            .map(|t| {
                let d = (t as f64 * speed).min((last - t as f64) * speed).min(room);
                (x0 + dir * d, y0)
            })
            .collect();
        tracks.insert(member.name.clone(), pts);
    }
    let moving = tracks.values().any(|pts| pts.windows(2).any(|p| p[0] != p[1]));
    let frames = if moving {
        let bg = scrub_figures(keyframe, None);
        (0..t_len).map(|t| if t == 0 { keyframe.clone() } else { render(&bg, &tracks, t, g) }).collect()
    } else {
        vec![keyframe.clone(); t_len]
    };
    Ok((frames, tracks_to_map(&tracks, g, w, h)))
}

/// Exit/entry point just beyond the horizontal edge nearest to `x`.
fn offscreen(x: f64, y: f64, g: u32, w: u32) -> (f64, f64) {
    let out = g as f64 / 2.0 + 1.0;
    if x < w as f64 / 2.0 {
        (-out, y)
    } else {
        (w as f64 + out, y)
    }
}

/// Bridge two pinned endpoint frames. Staying characters glide between their
/// endpoint positions, exiting ones walk off the nearest edge and entering
/// ones walk in from the edge nearest their final position.
pub fn first_last_to_video(
    world: &MockWorld,
    first: &RgbImage,
    last: &RgbImage,
    tau: &TauSummary,
    frame_count: u32,
) -> Result<(Vec<RgbImage>, VisibilityMap), VideoError> {
    if frame_count < 2 {
        return Err(VideoError::TooFewFrames(frame_count));
    }
    if first.dimensions() != last.dimensions() {
        return Err(VideoError::SizeMismatch);
    }
    let (w, h) = first.dimensions();
    let g = world.glyph_size;
    let start: BTreeSet<String> = tau.start.iter().cloned().collect();
    let end: BTreeSet<String> = tau.end.iter().cloned().collect();
    let names: BTreeSet<String> = start.union(&end).cloned().collect();
    let at_first = locate(first, names.iter().cloned(), g);
    let at_last = locate(last, names.iter().cloned(), g);
    let seen_first: BTreeSet<String> = at_first.keys().cloned().collect();
    let seen_last: BTreeSet<String> = at_last.keys().cloned().collect();
    if seen_first != start {
        return Err(VideoError::TauMismatch(format!("first frame shows {seen_first:?}, start set is {start:?}")));
    }
    if seen_last != end {
        return Err(VideoError::TauMismatch(format!("last frame shows {seen_last:?}, end set is {end:?}")));
    }
    for (label, img, set) in [("first", first, &start), ("last", last, &end)] {
        let n = count_figures(img);
        if n as usize != set.len() {
            return Err(VideoError::TauMismatch(format!("{label} frame holds {n} figures, expected {}", set.len())));
        }
    }

    let steps = (frame_count - 1) as f64;
    let mut tracks: BTreeMap<String, Track> = BTreeMap::new();
    for name in &names {
        let (from, to) = match (at_first.get(name), at_last.get(name)) {
            (Some(&a), Some(&b)) => (a, b),
            (Some(&a), None) => (a, offscreen(a.0, a.1, g, w)),
            (None, Some(&b)) => (offscreen(b.0, b.1, g, w), b),
            (None, None) => unreachable!("name comes from the endpoint sets"),
        };
        let dist = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
        if dist / steps > world.s_max + 1e-9 {
            return Err(VideoError::SpeedBound {
                name: name.clone(),
                needed: format!("{:.3}", dist / steps),
                limit: format!("{}", world.s_max),
            });
        }
        let pts = (0..frame_count)
            .map(|t| {
                let u = t as f64 / steps;
                (from.0 + (to.0 - from.0) * u, from.1 + (to.1 - from.1) * u)
            })
            .collect();
        tracks.insert(name.clone(), pts);
    }

    let bg = scrub_figures(first, Some(last));
    let t_len = frame_count as usize;
    let frames = (0..t_len)
        .map(|t| match t {
            0 => first.clone(),
            t if t == t_len - 1 => last.clone(),
            t => render(&bg, &tracks, t, g),
        })
        .collect();
    Ok((frames, tracks_to_map(&tracks, g, w, h)))
}

/// How a mock text-to-video clip deviates from its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum T2vDefect {
    /// A partial extra figure intrudes at the corner of the first frame.
    LeakFirst,
    /// One requested figure is missing from the last frame.
    MissingLast,
    /// An extra figure enters the last frame at the edge.
    ExtraLast,
}

/// Low-discrepancy unit value for a record seed (golden-ratio Weyl sequence).
pub fn weyl_unit(seed: u64) -> f64 {
    (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 / (1u64 << 53) as f64
}

/// Defect of the clip generated with `seed`, if the profile makes it fail.
pub fn t2v_defect(seed: u64, fail_fraction: f64) -> Option<T2vDefect> {
    if weyl_unit(seed) >= fail_fraction {
        return None;
    }
    Some(match stable_hash([b"defect".as_slice(), &seed.to_le_bytes()]) % 3 {
        0 => T2vDefect::LeakFirst,
        1 => T2vDefect::MissingLast,
        _ => T2vDefect::ExtraLast,
    })
}

/// Read the requested endpoint figure counts from a prompt's count clause
/// ("opens with N character(s) in frame and closes with M character(s)").
pub fn parse_count_clause(prompt: &str) -> Option<(u32, u32)> {
    let number_after = |key: &str| -> Option<u32> {
        let at = prompt.find(key)? + key.len();
        let digits: String = prompt[at..].chars().take_while(|c| c.is_ascii_digit()).collect();
        digits.parse().ok()
    };
    Some((number_after("opens with ")?, number_after("closes with ")?))
}

/// Mock text-to-video: anonymous figures matching the prompt's count clause,
/// corrupted according to the failure profile.
pub fn text_to_video(
    world: &MockWorld,
    prompt: &str,
    seed: u64,
    width: u32,
    height: u32,
    frame_count: u32,
    fail_fraction: f64,
) -> Result<(Vec<RgbImage>, Option<T2vDefect>), VideoError> {
    if frame_count < 2 {
        return Err(VideoError::TooFewFrames(frame_count));
    }
    let (start, end) =
        parse_count_clause(prompt).ok_or_else(|| VideoError::Prompt("missing endpoint count clause".into()))?;
    if start > 4 || end > 4 {
        return Err(VideoError::Prompt(format!("at most four figures, asked for {start}/{end}")));
    }
    let g = world.glyph_size;
    let bg = background(&format!("t2v:{prompt}"), seed, width, height);
    let defect = t2v_defect(seed, fail_fraction);
    let decoy = stable_hash([b"decoy".as_slice(), &seed.to_le_bytes()]) % 4 == 0;
    let slots = 4;
    let y = height as f64 * 0.55;
    let slot_x = |i: usize| {
        let (lo, hi) = slot_bounds(i, slots, width);
        ((lo + hi) / 2.0).round()
    };
    let steps = (frame_count - 1) as f64;
    let shown_last = match defect {
        Some(T2vDefect::MissingLast) if end > 0 => end - 1,
        _ => end,
    };
    let mut frames = Vec::with_capacity(frame_count as usize);
    for t in 0..frame_count {
        let u = t as f64 / steps;
        let mut frame = bg.clone();
        if decoy {
            draw_statue(&mut frame, width as i64 / 2 - 4, height as i64 - 14, 8, 12);
        }
        let last = t == frame_count - 1;
        let both = start.min(end) as usize;
        for i in 0..start.max(end) as usize {
            let c = figure_color(i);
            if i < both {
                if last && i as u32 >= shown_last {
                    continue;
                }
                draw_glyph(&mut frame, slot_x(i), y, g, c);
            } else if i < start as usize {
                // leaving toward the left edge, gone by the last frame
                let x = slot_x(i) + (-(g as f64) - slot_x(i)) * u;
                if !last {
                    draw_glyph(&mut frame, x, y, g, c);
                }
            } else {
                // entering from the right edge, in place on the last frame
                if t == 0 || (last && i as u32 >= shown_last) {
                    continue;
                }
                let from = width as f64 + g as f64;
                let x = from + (slot_x(i) - from) * u;
                draw_glyph(&mut frame, x, y, g, c);
            }
        }
        match defect {
            Some(T2vDefect::LeakFirst) if t == 0 => draw_glyph(&mut frame, 2.0, 2.0, g, figure_color(7)),
            Some(T2vDefect::ExtraLast) | Some(T2vDefect::MissingLast) if last && shown_last == end => {
                draw_glyph(&mut frame, width as f64 - 2.0, 4.0, g, figure_color(6))
            }
            _ => {}
        }
        frames.push(frame);
    }
    Ok((frames, defect))
}

/// Slot layout used by the mock compositing seat.
pub fn compose(world: &MockWorld, base: &RgbImage, cast: &[CastMember]) -> RgbImage {
    let (w, h) = base.dimensions();
    let g = world.glyph_size;
    let mut cast: Vec<&CastMember> = cast.iter().collect();
    cast.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = base.clone();
    for (i, member) in cast.iter().enumerate() {
        let (x, y) = slot_position(member.pose, i, cast.len(), w, h, g);
        draw_glyph(&mut out, x, y, g, palette(&member.name));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::MovementType;

    fn world() -> MockWorld {
        MockWorld::default()
    }

    fn cast(members: &[(&str, Pose)]) -> Vec<CastMember> {
        members.iter().map(|(n, p)| CastMember { name: n.to_string(), pose: *p }).collect()
    }

    fn tau(start: &[&str], end: &[&str]) -> TauSummary {
        let s: BTreeSet<String> = start.iter().map(|x| x.to_string()).collect();
        let e: BTreeSet<String> = end.iter().map(|x| x.to_string()).collect();
        let meta = crate::transition::metadata_from_sets(&s, &e);
        TauSummary::from(&meta)
    }

    #[test]
    fn static_pose_holds_keyframe() {
        let bg = background("Forest", 3, 128, 80);
        let c = cast(&[("A", Pose::Standing)]);
        let key = compose(&world(), &bg, &c);
        let (frames, vis) = image_to_video(&world(), &key, &c, 12).unwrap();
        assert!(frames.iter().all(|f| *f == key));
        assert!(vis["A"].visibility.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn walking_stays_in_bounds() {
        let bg = background("Forest", 3, 128, 80);
        let c = cast(&[("A", Pose::Walking), ("B", Pose::Running)]);
        let key = compose(&world(), &bg, &c);
        let (frames, vis) = image_to_video(&world(), &key, &c, 40).unwrap();
        assert_eq!(frames[0], key);
        for track in vis.values() {
            assert!(track.visibility.iter().all(|&v| v == 1.0));
            for p in track.centroid.windows(2) {
                assert!((p[1][0] - p[0][0]).abs() <= world().s_max);
            }
        }
        assert_ne!(frames[20], key);
        assert_eq!(frames[39], key);
    }

    #[test]
    fn entry_bridge_pins_endpoints() {
        let w = world();
        let bg = background("Castle", 7, 128, 80);
        let first = compose(&w, &bg, &cast(&[("A", Pose::Standing)]));
        let last = compose(&w, &bg, &cast(&[("A", Pose::Standing), ("B", Pose::Standing)]));
        let t = tau(&["A"], &["A", "B"]);
        assert_eq!(t.movement, MovementType::Entry);
        let (frames, vis) = first_last_to_video(&w, &first, &last, &t, 40).unwrap();
        assert_eq!(frames.len(), 40);
        assert_eq!(frames[0], first);
        assert_eq!(frames[39], last);
        let vb = &vis["B"].visibility;
        assert_eq!(vb[0], 0.0);
        assert_eq!(vb[39], 1.0);
        assert!(vb.windows(2).all(|p| p[1] >= p[0]));
        assert!(vb.windows(2).all(|p| (p[1] - p[0]).abs() <= w.delta_max()));
    }

    #[test]
    fn contradicting_tau_is_rejected() {
        let w = world();
        let bg = background("Castle", 7, 128, 80);
        let first = compose(&w, &bg, &cast(&[("A", Pose::Standing)]));
        let last = compose(&w, &bg, &cast(&[("B", Pose::Standing)]));
        let err = first_last_to_video(&w, &first, &last, &tau(&["A"], &["A"]), 40).unwrap_err();
        assert!(matches!(err, VideoError::TauMismatch(_)));
    }

    #[test]
    fn too_short_bridge_breaks_speed_bound() {
        let w = world();
        let bg = background("Castle", 7, 128, 80);
        let first = compose(&w, &bg, &cast(&[("A", Pose::Standing)]));
        let err = first_last_to_video(&w, &first, &bg, &tau(&["A"], &[]), 4).unwrap_err();
        assert!(matches!(err, VideoError::SpeedBound { .. }));
    }

    #[test]
    fn count_clause_parses() {
        let p = "Two explorers. The shot opens with 0 characters in frame and closes with 2 characters in frame.";
        assert_eq!(parse_count_clause(p), Some((0, 2)));
        assert_eq!(parse_count_clause("no clause"), None);
    }

    #[test]
    fn t2v_clean_clips_match_counts() {
        let w = world();
        for (s, e) in [(0, 1), (1, 0), (2, 2), (4, 3), (0, 0), (3, 4)] {
            let p = format!("opens with {s} characters in frame and closes with {e} characters in frame");
            let (frames, defect) = text_to_video(&w, &p, 11, 128, 64, 10, 0.0).unwrap();
            assert!(defect.is_none());
            assert_eq!(count_figures(&frames[0]), s);
            assert_eq!(count_figures(&frames[9]), e);
        }
    }

    #[test]
    fn t2v_defects_change_counts() {
        let w = world();
        let p = "opens with 1 characters in frame and closes with 2 characters in frame";
        let mut seen = BTreeSet::new();
        for seed in 0..200u64 {
            let (frames, defect) = text_to_video(&w, p, seed, 128, 64, 10, 0.602).unwrap();
            let counts = (count_figures(&frames[0]), count_figures(&frames[9]));
            match defect {
                None => assert_eq!(counts, (1, 2)),
                Some(d) => {
                    assert_ne!(counts, (1, 2), "{d:?}");
                    seen.insert(format!("{d:?}"));
                }
            }
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn weyl_rate_is_close_to_fraction() {
        let fails = (5000..6000u64).filter(|&s| weyl_unit(s) < 0.602).count();
        assert!((fails as f64 / 1000.0 - 0.602).abs() < 0.005, "{fails}");
    }
}
