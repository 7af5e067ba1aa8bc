//! Property tests against brute-force oracles.

use image::Rgb;
use proptest::prelude::*;

use stereoforge::degrade::area_resize;
use stereoforge::inpaint::baseline_inpaint;
use stereoforge::postproc::{match_histograms_frame, matching_lut};
use stereoforge::tensorio::{
    load_depth, load_mask, load_video, save_depth, save_mask, save_video, DepthEncoding,
};
use stereoforge::warp::{dilate_mask, forward_warp};
use stereoforge::{DepthSequence, Frame, OcclusionMask, Plane, Video};

fn frame_from(w: u32, h: u32, bytes: &[u8]) -> Frame {
    Frame::from_raw(w, h, bytes[..(w * h * 3) as usize].to_vec()).unwrap()
}

fn arb_frame(max_w: u32, max_h: u32) -> impl Strategy<Value = Frame> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |b| frame_from(w, h, &b))
    })
}

fn arb_video() -> impl Strategy<Value = Video> {
    (8u32..=20, 8u32..=14, 1usize..=3).prop_flat_map(|(w, h, f)| {
        proptest::collection::vec(proptest::collection::vec(any::<u8>(), (w * h * 3) as usize), f)
            .prop_map(move |fs| Video::new(fs.iter().map(|b| frame_from(w, h, b)).collect()).unwrap())
    })
}

/// Exhaustive splat: every target pixel considers all sources of its row.
fn splat_oracle(frame: &Frame, disp: &[i32], depth: Option<&[f32]>) -> (Frame, Vec<u8>) {
    let (w, h) = frame.dimensions();
    let mut image = Frame::new(w, h);
    let mut mask = vec![1u8; (w * h) as usize];
    for y in 0..h {
        for t in 0..w as i64 {
            let mut best: Option<(f32, u32)> = None;
            for x in 0..w {
                let i = (y * w + x) as usize;
                if x as i64 - disp[i] as i64 != t {
                    continue;
                }
                let key = depth.map_or(-(disp[i] as f32), |d| d[i]);
                let better = match best {
                    None => true,
                    Some((bk, bx)) => key < bk || (key == bk && x > bx),
                };
                if better {
                    best = Some((key, x));
                }
            }
            if let Some((_, x)) = best {
                image.put_pixel(t as u32, y, *frame.get_pixel(x, y));
                mask[(y * w) as usize + t as usize] = 0;
            }
        }
    }
    (image, mask)
}

fn arb_warp_case() -> impl Strategy<Value = (Frame, Vec<i32>, Option<Vec<f32>>)> {
    (1u32..=8, 1u32..=8).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (
            proptest::collection::vec(any::<u8>(), n * 3),
            proptest::collection::vec(0i32..=w as i32 + 1, n),
            // few distinct depths so ties are common
            proptest::option::of(proptest::collection::vec(1u8..=3, n)),
        )
            .prop_map(move |(px, d, z)| {
                (frame_from(w, h, &px), d, z.map(|z| z.into_iter().map(f32::from).collect()))
            })
    })
}

fn chebyshev_oracle(mask: &Plane<u8>, reach: i64) -> Plane<u8> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    Plane::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let hit = (0..h).any(|yy| {
            (0..w).any(|xx| mask.get(xx as u32, yy as u32) == 1 && (xx - x).abs() <= reach && (yy - y).abs() <= reach)
        });
        hit as u8
    })
}

/// Nearest-right, else nearest-left, else nearest filled row (upper on ties).
fn inpaint_oracle(frame: &Frame, mask: &Plane<u8>) -> Option<Frame> {
    let (w, h) = frame.dimensions();
    let valid = |x: u32, y: u32| mask.get(x, y) == 0;
    let row_ok: Vec<bool> = (0..h).map(|y| (0..w).any(|x| valid(x, y))).collect();
    if !row_ok.contains(&true) {
        return None;
    }
    let fill_in_row = |x: u32, y: u32| -> Rgb<u8> {
        if valid(x, y) {
            return *frame.get_pixel(x, y);
        }
        if let Some(r) = (x + 1..w).find(|&r| valid(r, y)) {
            return *frame.get_pixel(r, y);
        }
        let l = (0..x).rev().find(|&l| valid(l, y)).unwrap();
        *frame.get_pixel(l, y)
    };
    Some(Frame::from_fn(w, h, |x, y| {
        if row_ok[y as usize] {
            return fill_in_row(x, y);
        }
        let src = (0..h)
            .filter(|&r| row_ok[r as usize])
            .min_by_key(|&r| ((r as i64 - y as i64).abs(), r))
            .unwrap();
        fill_in_row(x, src)
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn video_round_trip(video in arb_video()) {
        let dir = tempfile::tempdir().unwrap();
        save_video(&video, dir.path()).unwrap();
        prop_assert_eq!(load_video(dir.path()).unwrap(), video);
    }

    #[test]
    fn depth_round_trip_pfm(
        (w, h, values) in (8u32..=12, 8u32..=12).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(1e-3f32..1e4, (w * h * 2) as usize))
        })
    ) {
        let n = (w * h) as usize;
        let depth = DepthSequence::new(vec![
            Plane::from_vec(w, h, values[..n].to_vec()).unwrap(),
            Plane::from_vec(w, h, values[n..].to_vec()).unwrap(),
        ]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_depth(&depth, dir.path(), DepthEncoding::Pfm, 1.0).unwrap();
        prop_assert_eq!(load_depth(dir.path()).unwrap(), depth);
    }

    #[test]
    fn depth_round_trip_png16(codes in proptest::collection::vec(1u16..=u16::MAX, 64)) {
        let scale = 0.001;
        let values = codes.iter().map(|&c| (c as f64 * scale) as f32).collect();
        let depth = DepthSequence::new(vec![Plane::from_vec(8, 8, values).unwrap()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_depth(&depth, dir.path(), DepthEncoding::Png16, scale).unwrap();
        prop_assert_eq!(load_depth(dir.path()).unwrap(), depth);
    }

    #[test]
    fn mask_round_trip(bits in proptest::collection::vec(0u8..=1, 2 * 9 * 10)) {
        let mask = OcclusionMask::new(vec![
            Plane::from_vec(9, 10, bits[..90].to_vec()).unwrap(),
            Plane::from_vec(9, 10, bits[90..].to_vec()).unwrap(),
        ]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_mask(&mask, dir.path()).unwrap();
        prop_assert_eq!(load_mask(dir.path()).unwrap(), mask);
    }

    #[test]
    fn warp_matches_splat_oracle((frame, disp, depth) in arb_warp_case()) {
        let (w, h) = frame.dimensions();
        let dplane = Plane::from_vec(w, h, disp.iter().map(|&d| d as f32).collect()).unwrap();
        let zplane = depth.as_ref().map(|z| Plane::from_vec(w, h, z.clone()).unwrap());
        let got = forward_warp(&frame, &dplane, zplane.as_ref()).unwrap();
        let (image, mask) = splat_oracle(&frame, &disp, depth.as_deref());
        prop_assert_eq!(got.image, image);
        prop_assert_eq!(got.mask.into_vec(), mask);
    }

    #[test]
    fn warp_holes_are_black(frame in arb_frame(12, 6), d in 0u32..6) {
        let (w, h) = frame.dimensions();
        let got = forward_warp(&frame, &Plane::filled(w, h, d as f32), None).unwrap();
        for y in 0..h {
            for x in 0..w {
                if got.mask.get(x, y) == 1 {
                    prop_assert_eq!(got.image.get_pixel(x, y).0, [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn dilation_matches_chebyshev_oracle(
        (w, h, bits) in (1u32..=12, 1u32..=12).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(prop::bool::weighted(0.1), (w * h) as usize))
        }),
        radius in 0u32..=2,
        iterations in 1u32..=3,
    ) {
        let mask = Plane::from_vec(w, h, bits.iter().map(|&b| b as u8).collect()).unwrap();
        let got = dilate_mask(&mask, radius, iterations);
        prop_assert_eq!(got, chebyshev_oracle(&mask, (radius * iterations) as i64));
    }

    #[test]
    fn dilation_is_extensive_and_monotone(
        bits in proptest::collection::vec(prop::bool::weighted(0.2), 100),
        extra in proptest::collection::vec(prop::bool::weighted(0.1), 100),
        radius in 0u32..=3,
    ) {
        let a = Plane::from_vec(10, 10, bits.iter().map(|&b| b as u8).collect()).unwrap();
        let b = Plane::from_vec(10, 10, bits.iter().zip(&extra).map(|(&p, &q)| (p || q) as u8).collect()).unwrap();
        let da = dilate_mask(&a, radius, 1);
        let db = dilate_mask(&b, radius, 1);
        for i in 0..100 {
            prop_assert!(da.as_slice()[i] >= a.as_slice()[i]);
            prop_assert!(db.as_slice()[i] >= da.as_slice()[i]);
        }
    }

    #[test]
    fn area_resize_preserves_energy(frame in arb_frame(24, 24), tw in 1u32..=24, th in 1u32..=24) {
        let tw = tw.min(frame.width());
        let th = th.min(frame.height());
        let out = area_resize(&frame, tw, th);
        for c in 0..3 {
            let mean = |f: &Frame| f.pixels().map(|p| p.0[c] as f64).sum::<f64>() / (f.width() * f.height()) as f64;
            prop_assert!((mean(&out) - mean(&frame)).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn up_down_is_a_projection(
        (frame, k) in (1u32..=4, 1u32..=4, 1u32..=4).prop_flat_map(|(tw, th, k)| {
            (arb_frame_exact(tw * k, th * k), Just(k))
        })
    ) {
        let (w, h) = frame.dimensions();
        let (tw, th) = (w / k, h / k);
        let once = area_resize(&area_resize(&frame, tw, th), w, h);
        let twice = area_resize(&area_resize(&once, tw, th), w, h);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn histogram_matching_is_monotone(src in arb_frame(16, 16), reference in arb_frame(16, 16)) {
        for c in 0..3 {
            let lut = matching_lut(&src, &reference, c);
            prop_assert!(lut.windows(2).all(|p| p[0] <= p[1]));
        }
        let out = match_histograms_frame(&src, &reference);
        let pixels: Vec<_> = src.pixels().zip(out.pixels()).collect();
        for (a, oa) in &pixels {
            for (b, ob) in &pixels {
                for c in 0..3 {
                    if a.0[c] <= b.0[c] {
                        prop_assert!(oa.0[c] <= ob.0[c]);
                    }
                }
            }
        }
    }

    #[test]
    fn matched_values_come_from_reference(src in arb_frame(10, 10), reference in arb_frame(10, 10)) {
        let out = match_histograms_frame(&src, &reference);
        for c in 0..3 {
            for p in out.pixels() {
                prop_assert!(reference.pixels().any(|r| r.0[c] == p.0[c]));
            }
        }
    }

    #[test]
    fn baseline_inpaint_matches_oracle(
        (frame, bits) in (1u32..=10, 1u32..=8).prop_flat_map(|(w, h)| {
            (arb_frame_exact(w, h), proptest::collection::vec(prop::bool::weighted(0.5), (w * h) as usize))
        })
    ) {
        let (w, h) = frame.dimensions();
        let mask = Plane::from_vec(w, h, bits.iter().map(|&b| b as u8).collect()).unwrap();
        match inpaint_oracle(&frame, &mask) {
            Some(expected) => {
                let got = baseline_inpaint(&frame, &mask).unwrap();
                prop_assert_eq!(got, expected);
            }
            None => prop_assert!(baseline_inpaint(&frame, &mask).is_err()),
        }
    }
}

fn arb_frame_exact(w: u32, h: u32) -> impl Strategy<Value = Frame> {
    proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |b| frame_from(w, h, &b))
}

#[test]
fn l_shape_dilation_composes() {
    let mut mask = Plane::filled(16, 16, 0u8);
    for y in 4..10 {
        mask.set(5, y, 1);
    }
    for x in 5..11 {
        mask.set(x, 9, 1);
    }
    let twice = dilate_mask(&mask, 1, 2);
    assert_eq!(twice, dilate_mask(&mask, 2, 1));
    assert_eq!(twice, chebyshev_oracle(&mask, 2));
}

#[test]
fn identity_inpaint_on_unmasked_pixels() {
    let frame = Frame::from_fn(12, 9, |x, y| Rgb([(x * 20) as u8, (y * 25) as u8, 3]));
    let mask = Plane::from_fn(12, 9, |x, y| ((x + 2 * y) % 5 == 0) as u8);
    let out = baseline_inpaint(&frame, &mask).unwrap();
    for y in 0..9 {
        for x in 0..12 {
            if mask.get(x, y) == 0 {
                assert_eq!(out.get_pixel(x, y), frame.get_pixel(x, y));
            }
        }
    }
}
