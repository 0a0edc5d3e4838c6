use std::collections::BTreeSet;

use proptest::prelude::*;

use vic_core::annotations::{
    count_unique, derive_flow, parse_annotation_str, write_annotation_csv, ClipAnnotation, FrameAnnotation, HeadPoint,
    Supervision,
};
use vic_core::autograd::{Array, Tape};
use vic_core::density::{gt_bundle, rasterize, DensityMap, KernelSpec};
use vic_core::image::Image;
use vic_core::inference::{count_with, pair_indices, CountOptions, FlowSource};
use vic_core::metrics::{mae_rmse, miae_moae, wrae, PairFlow, VideoEvalRecord};
use vic_core::model::attention::{mca_with_attention, Projections};
use vic_core::model::{Model, ModelConfig};
use vic_core::training::{loss, Augment};
use vic_core::model::Variant;

const W: u32 = 40;
const H: u32 = 30;

fn point() -> impl Strategy<Value = (f64, f64)> {
    (0.0..W as f64 - 1e-9, 0.0..H as f64 - 1e-9)
}

/// Two frames of unique-id points drawn from a shared id pool.
fn frame_pair() -> impl Strategy<Value = (FrameAnnotation, FrameAnnotation)> {
    let frame = |idx| {
        prop::collection::btree_map(0u64..40, point(), 0..25).prop_map(move |m| {
            FrameAnnotation::new(idx, W, H, m.into_iter().map(|(id, (x, y))| HeadPoint::with_id(x, y, id)).collect())
        })
    };
    (frame(0), frame(1))
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (0.5..6.0f64).prop_map(KernelSpec::with_sigma)
}

fn diff(a: &DensityMap, b: &DensityMap) -> f64 {
    a.max_abs_diff(b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_partitions_both_frames((a, b) in frame_pair()) {
        let f = derive_flow(&a, &b).unwrap();
        prop_assert_eq!(f.shared_a.len() + f.outflow.len(), a.points.len());
        prop_assert_eq!(f.shared_b.len() + f.inflow.len(), b.points.len());
        prop_assert_eq!(f.shared_a.len(), f.shared_b.len());
        let ids = |v: &[HeadPoint]| v.iter().map(|p| p.track_id.unwrap()).collect::<BTreeSet<_>>();
        prop_assert!(ids(&f.shared_a).is_disjoint(&ids(&f.outflow)));
        prop_assert!(ids(&f.shared_b).is_disjoint(&ids(&f.inflow)));
    }

    #[test]
    fn flow_is_antisymmetric((a, b) in frame_pair()) {
        let ab = derive_flow(&a, &b).unwrap();
        let ba = derive_flow(&b, &a).unwrap();
        prop_assert_eq!(ab.swapped().canonical(), ba.canonical());
    }

    #[test]
    fn contiguous_tracks_count_exactly(
        spans in prop::collection::vec((0usize..12, 1usize..12, point()), 1..30),
    ) {
        let n = 12;
        let frames = (0..n)
            .map(|t| {
                let points = spans
                    .iter()
                    .enumerate()
                    .filter(|(_, (start, len, _))| t >= *start && t < start + len)
                    .map(|(id, (_, _, (x, y)))| HeadPoint::with_id(*x, *y, id as u64))
                    .collect();
                FrameAnnotation::new(t, W, H, points)
            })
            .collect();
        let clip = ClipAnnotation { clip_id: "c".into(), frames, fps: 3.0, supervision: Supervision::Full };
        prop_assert_eq!(count_unique(&clip, 1).unwrap(), clip.distinct_ids());
    }

    #[test]
    fn csv_round_trips(
        frames in prop::collection::vec(prop::collection::btree_map(0u64..20, (0u32..W, 0u32..H), 0..6), 1..6),
        last in prop::collection::btree_map(0u64..20, (0u32..W, 0u32..H), 1..6),
    ) {
        let frames: Vec<FrameAnnotation> = frames
            .into_iter()
            .chain([last])
            .enumerate()
            .map(|(i, m)| {
                let pts = m.into_iter().map(|(id, (x, y))| HeadPoint::with_id(x as f64 + 0.25, y as f64 * 0.5, id));
                FrameAnnotation::new(i, W, H, pts.collect())
            })
            .collect();
        let clip = ClipAnnotation { clip_id: "rt".into(), frames, fps: 6.0, supervision: Supervision::Full };
        let text = write_annotation_csv(&clip, 0.0);
        let once = parse_annotation_str(&text, "rt", W, H, 6.0).unwrap().clip;
        prop_assert_eq!(&once, &clip);
        let twice = parse_annotation_str(&write_annotation_csv(&once, 0.0), "rt", W, H, 6.0).unwrap().clip;
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn rasterized_mass_is_point_count(pts in prop::collection::vec(point(), 0..120), k in kernel()) {
        let points: Vec<_> = pts.iter().map(|&(x, y)| HeadPoint::new(x, y)).collect();
        let map = rasterize(&points, W, H, &k, 1).unwrap();
        prop_assert!((map.mass() - points.len() as f64).abs() <= 1e-3);
        prop_assert!(map.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rasterize_is_additive(
        a in prop::collection::vec(point(), 0..40),
        b in prop::collection::vec(point(), 0..40),
        k in kernel(),
    ) {
        let hp = |v: &[(f64, f64)]| v.iter().map(|&(x, y)| HeadPoint::new(x, y)).collect::<Vec<_>>();
        let union: Vec<_> = hp(&a).into_iter().chain(hp(&b)).collect();
        let whole = rasterize(&union, W, H, &k, 1).unwrap();
        let parts = rasterize(&hp(&a), W, H, &k, 1).unwrap().add(&rasterize(&hp(&b), W, H, &k, 1).unwrap()).unwrap();
        prop_assert!(diff(&whole, &parts) <= 1e-6);
    }

    #[test]
    fn ground_truth_subtraction_identity((a, b) in frame_pair(), k in kernel()) {
        let g = gt_bundle(&derive_flow(&a, &b).unwrap(), &a, &b, &k, 1).unwrap();
        prop_assert!(diff(&g.global_a, &g.shared_a.add(&g.outflow_a).unwrap()) <= 1e-6);
        prop_assert!(diff(&g.global_b, &g.shared_b.add(&g.inflow_b).unwrap()) <= 1e-6);
    }

    #[test]
    fn interior_translation_shifts_the_map(
        pts in prop::collection::vec((12.0..20.0f64, 10.0..16.0f64), 1..10),
        dx in 0usize..6,
        dy in 0usize..4,
    ) {
        let k = KernelSpec::with_sigma(1.5);
        let hp = |ox: f64, oy: f64| pts.iter().map(|&(x, y)| HeadPoint::new(x + ox, y + oy)).collect::<Vec<_>>();
        let base = rasterize(&hp(0.0, 0.0), W, H, &k, 1).unwrap();
        let moved = rasterize(&hp(dx as f64, dy as f64), W, H, &k, 1).unwrap();
        for r in 0..H as usize - dy {
            for c in 0..W as usize - dx {
                prop_assert!((moved.get(r + dy, c + dx) - base.get(r, c)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn flip_commutes_with_rasterization(
        pts in prop::collection::vec((0.0..=W as f64 - 1.0, 0.0..=H as f64 - 1.0), 0..30),
        k in kernel(),
    ) {
        let frame = FrameAnnotation::new(0, W, H, pts.iter().map(|&(x, y)| HeadPoint::new(x, y)).collect());
        let aug = Augment { flip: true, ..Augment::identity(W as usize, H as usize) };
        let flipped = aug.apply_points(&frame);
        let direct = rasterize(&flipped.points, W, H, &k, 1).unwrap();
        let mirrored = rasterize(&frame.points, W, H, &k, 1).unwrap().flipped();
        prop_assert!(diff(&direct, &mirrored) <= 1e-6);
    }

    #[test]
    fn crop_commutes_with_rasterization(
        // Kernel supports stay inside every crop window.
        pts in prop::collection::vec((10.0..=28.0f64, 8.0..=20.0f64), 0..20),
        cx in 0usize..8,
        cy in 0usize..6,
    ) {
        let k = KernelSpec::with_sigma(1.0);
        let frame = FrameAnnotation::new(0, W, H, pts.iter().map(|&(x, y)| HeadPoint::new(x, y)).collect());
        let (cw, ch) = (W as usize - 8, H as usize - 6);
        let aug = Augment { crop_x: cx, crop_y: cy, crop_width: cw, crop_height: ch, ..Augment::identity(W as usize, H as usize) };
        let cropped = aug.apply_points(&frame);
        prop_assert_eq!(cropped.points.len(), frame.points.len());
        let direct = rasterize(&cropped.points, cw as u32, ch as u32, &k, 1).unwrap();
        let window = rasterize(&frame.points, W, H, &k, 1).unwrap().window(cy, cx, ch, cw).unwrap();
        prop_assert!(diff(&direct, &window) <= 1e-6);
    }

    #[test]
    fn mae_never_exceeds_rmse(recs in records()) {
        let (mae, rmse) = mae_rmse(&recs).unwrap();
        prop_assert!(mae >= 0.0 && mae <= rmse * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn wrae_is_scale_invariant(recs in records(), c in 1u64..20) {
        let recs: Vec<_> = recs.into_iter().map(|r| VideoEvalRecord::new(r.clip_id, r.y_true.max(1), r.y_pred, r.n_frames)).collect();
        let scaled: Vec<_> = recs
            .iter()
            .map(|r| VideoEvalRecord::new(r.clip_id.clone(), r.y_true * c, r.y_pred * c as f64, r.n_frames))
            .collect();
        let (a, b) = (wrae(&recs).unwrap(), wrae(&scaled).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn metrics_ignore_record_order(recs in records(), rot in 0usize..20) {
        let mut flows = recs.clone();
        for (i, r) in flows.iter_mut().enumerate() {
            r.pair_flows.push(PairFlow { inflow_pred: i as f64, inflow_true: 1.0, outflow_pred: 0.5, outflow_true: i as f64 });
        }
        let mut rotated = flows.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        let (m1, r1) = mae_rmse(&flows).unwrap();
        let (m2, r2) = mae_rmse(&rotated).unwrap();
        prop_assert!(close(m1, m2) && close(r1, r2));
        let (w1, w2) = (wrae(&flows).unwrap(), wrae(&rotated).unwrap());
        prop_assert!(close(w1, w2));
        let (i1, o1) = miae_moae(&flows).unwrap();
        let (i2, o2) = miae_moae(&rotated).unwrap();
        prop_assert!(close(i1, i2) && close(o1, o2) && i1 >= 0.0 && o1 >= 0.0);
    }

    #[test]
    fn count_total_matches_its_parts(
        n in 1usize..40,
        stride in 1usize..7,
        tail in any::<bool>(),
        masses in prop::collection::vec(0.0..50.0f64, 41),
    ) {
        struct Fixed(usize, Vec<f64>);
        impl FlowSource for Fixed {
            fn n_frames(&self) -> usize { self.0 }
            fn frame_count(&self, i: usize) -> vic_core::Result<f64> { Ok(self.1[i]) }
            fn pair_flow(&mut self, a: usize, b: usize) -> vic_core::Result<(f64, f64)> { Ok((self.1[b] / 3.0, self.1[a] / 7.0)) }
        }
        let opts = CountOptions { stride, tail_pair: tail, ..CountOptions::default() };
        let r = count_with(&mut Fixed(n, masses), "v", &opts).unwrap();
        prop_assert_eq!(r.recomputed_total(), r.total);
        prop_assert_eq!(r.pairs.len(), pair_indices(n, stride, tail).unwrap().len());
        if !tail {
            prop_assert_eq!(r.pairs.len(), (n - 1) / stride);
        }
        prop_assert!(r.total.is_finite() && r.total >= 0.0);
    }

    #[test]
    fn resolution_cap_never_upscales(w in 1usize..300, h in 1usize..300, long in 8usize..320, short in 8usize..200) {
        let (capped, scale) = Image::filled(w, h, [0.2; 3]).capped(long, short);
        prop_assert!(scale > 0.0 && scale <= 1.0);
        prop_assert!(capped.width() <= w && capped.height() <= h);
        prop_assert!(capped.width().max(capped.height()) <= long.max(1));
        prop_assert!(capped.width().min(capped.height()) <= short.max(1));
    }
}

fn records() -> impl Strategy<Value = Vec<VideoEvalRecord>> {
    prop::collection::vec((0u64..400, 0.0..500.0f64, 1usize..200), 1..20).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (y, p, n))| VideoEvalRecord::new(format!("v{i}"), y, p, n))
            .collect()
    })
}

fn random_array(shape: &[usize], seed: u64) -> Array {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_is_invariant_to_key_order(
        t in 1usize..7,
        s in 1usize..9,
        heads in prop::sample::select(vec![1usize, 2, 4]),
        seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let c = 8;
        let tape = Tape::new();
        let m = |k: u64, shape: &[usize]| tape.constant(random_array(shape, seed ^ k));
        let p = Projections {
            wq: m(1, &[c, c]), bq: m(2, &[c]), wk: m(3, &[c, c]), bk: m(4, &[c]),
            wv: m(5, &[c, c]), bv: m(6, &[c]), wo: m(7, &[c, c]), bo: m(8, &[c]),
        };
        let q = random_array(&[t, c], seed ^ 9);
        let kv = random_array(&[s, c], seed ^ 10);
        let mut order: Vec<usize> = (0..s).collect();
        let mut x = perm_seed;
        for i in (1..s).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (x >> 33) as usize % (i + 1));
        }
        let kv_p = Array::from_fn(&[s, c], |i| kv.data()[order[i / c] * c + i % c]);
        let (out, attn) = mca_with_attention(tape.constant(q.clone()), tape.constant(kv), &p, heads).unwrap();
        let (out_p, _) = mca_with_attention(tape.constant(q.clone()), tape.constant(kv_p.clone()), &p, heads).unwrap();
        prop_assert!(out.value().max_abs_diff(&out_p.value()) <= 1e-6);
        for a in attn {
            for row in a.value().data().chunks(s) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
        let q_rev = Array::from_fn(&[t, c], |i| q.data()[(t - 1 - i / c) * c + i % c]);
        let (out_q, _) = mca_with_attention(tape.constant(q_rev), tape.constant(kv_p), &p, heads).unwrap();
        let expect = Array::from_fn(&[t, c], |i| out.value().data()[(t - 1 - i / c) * c + i % c]);
        prop_assert!(out_q.value().max_abs_diff(&expect) <= 1e-6);
    }

    #[test]
    fn loss_is_symmetric_nonnegative_and_sums((a, b) in frame_pair(), shift in 0.0..3.0f64) {
        let k = KernelSpec::with_sigma(2.0);
        let g1 = gt_bundle(&derive_flow(&a, &b).unwrap(), &a, &b, &k, 1).unwrap();
        let g2 = gt_bundle(&derive_flow(&b, &a).unwrap(), &b, &a, &k, 1).unwrap();
        let tape = Tape::new();
        let var = |m: &DensityMap| tape.constant(Array::new(&[1, m.height(), m.width()], m.to_f64().iter().map(|v| v + shift * 1e-3).collect()));
        let as_out = |g: &vic_core::density::GtBundle| vic_core::model::TapeOutputs {
            global_a: var(&g.global_a),
            global_b: var(&g.global_b),
            shared_a: Some(var(&g.shared_a)),
            shared_b: Some(var(&g.shared_b)),
            outflow_a: var(&g.outflow_a),
            inflow_b: var(&g.inflow_b),
        };
        let (t12, c12) = loss(&[as_out(&g1)], &[&g2], Variant::Dcfa).unwrap();
        let (t21, c21) = loss(&[as_out(&g2)], &[&g1], Variant::Dcfa).unwrap();
        prop_assert!((t12.item() - t21.item()).abs() <= 1e-12);
        for c in [c12, c21] {
            prop_assert!(c.l_g >= 0.0 && c.l_s >= 0.0 && c.l_o >= 0.0 && c.l_in >= 0.0);
        }
        prop_assert!((t12.item() - c12.total()).abs() <= 1e-12 * c12.total().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn swapping_frames_swaps_roles(seed in any::<u64>(), w in 16usize..40, h in 16usize..40) {
        let model = Model::new(ModelConfig { seed: seed % 1000, ..ModelConfig::tiny() }).unwrap();
        let img = |k: u64| {
            let a = random_array(&[h * w * 3], seed ^ k);
            Image::new(w, h, a.data().iter().map(|v| (0.5 + 0.5 * v) as f32).collect()).unwrap()
        };
        let (a, b) = (img(1), img(2));
        let ab = model.forward(&a, &b).unwrap();
        let ba = model.forward(&b, &a).unwrap();
        let d = |x: &Array, y: &Array| x.max_abs_diff(y);
        prop_assert!(d(&ab.global_a, &ba.global_b) <= 1e-5);
        prop_assert!(d(ab.shared_a.as_ref().unwrap(), ba.shared_b.as_ref().unwrap()) <= 1e-5);
        prop_assert!(d(&ab.outflow_a, &ba.inflow_b) <= 1e-5);
        prop_assert!(d(&ab.inflow_b, &ba.outflow_a) <= 1e-5);
        for (_, m) in ab.maps() {
            prop_assert_eq!(m.shape(), &[h, w][..]);
            prop_assert!(m.data().iter().all(|&v| v >= 0.0));
        }
    }
}
