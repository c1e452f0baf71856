//! Randomized invariant checks across the pipeline: formula laws that hold
//! for every input, ordering guarantees of the fitters and summaries, and
//! round trips through the on-disk formats.

use std::sync::OnceLock;

use cabin_locate_core::channel::{
    generate_dataset, load_dataset, save_dataset, CirBuffer, Dataset, EnvironmentProfile,
    JohnsonSuParams, Split,
};
use cabin_locate_core::correction::{apply_lr, apply_offset, fit_lr, fit_offset};
use cabin_locate_core::geometry::{generate_cabin, true_range, CabinParams, Point3};
use cabin_locate_core::localization::{
    assign_seat, assignment_threshold, axis_accuracy, multilaterate, ErrorStats, RangeSet,
};
use cabin_locate_core::nn::features::{build_features, fit_feature_spec};
use cabin_locate_core::nn::NnVariant;
use cabin_locate_core::ranging::{
    first_path_power, multipath_metric, range_from_tof, tof_from_twr, TwrTimestamps,
    SPEED_OF_LIGHT,
};
use proptest::prelude::*;

/// One small cabin and campaign shared by the heavier properties. Generated
/// once; every test treats it as read-only.
fn fixture() -> &'static Dataset {
    static FIX: OnceLock<Dataset> = OnceLock::new();
    FIX.get_or_init(|| {
        let params = CabinParams {
            rows: 3,
            columns: "ABCD".into(),
            anchor_count: 4,
            ..CabinParams::default()
        };
        let layout = generate_cabin(&params, 9).expect("fixture layout");
        let profile = EnvironmentProfile::aircraft_cabin();
        generate_dataset(&layout, &profile, 4, 21).expect("fixture dataset")
    })
}

fn cir(taps: Vec<f64>) -> CirBuffer {
    CirBuffer { taps, first_path_index: 0, tap_spacing: 1e-9 }
}

// ── formula laws ────────────────────────────────────────────────────────

proptest! {
    /// The metric is a ratio of taps to their max, so a common positive
    /// scale factor must not move it; and the summand (1 - t/max) is
    /// confined to [0, 1] for non-negative taps.
    #[test]
    fn multipath_metric_is_scale_invariant_and_bounded(
        body in prop::collection::vec(0.0..1e3f64, 1..63),
        peak in 1e-6..1e3f64,
        scale in 1e-3..1e3f64,
    ) {
        let mut taps = body;
        taps.push(peak);
        let base = multipath_metric(&cir(taps.clone())).expect("valid buffer");
        prop_assert!((0.0..=1.0).contains(&base), "metric {base} escaped [0, 1]");

        let scaled_taps: Vec<f64> = taps.iter().map(|t| t * scale).collect();
        let scaled = multipath_metric(&cir(scaled_taps)).expect("valid buffer");
        prop_assert!(
            (base - scaled).abs() <= 1e-9,
            "scaling taps by {scale} moved the metric from {base} to {scaled}"
        );
    }

    /// Scaling all three amplitude registers by k adds exactly 20 log10(k)
    /// dB: the registers enter the formula only through their squared sum.
    #[test]
    fn first_path_power_obeys_the_amplitude_shift_law(
        f1 in 1e-3..1e5f64,
        f2 in 1e-3..1e5f64,
        f3 in 1e-3..1e5f64,
        k in 1e-3..1e3f64,
        n in 1u32..4096,
        a in 0.0..200.0f64,
    ) {
        let base = first_path_power(f1, f2, f3, n, a).expect("positive amplitudes");
        let shifted = first_path_power(k * f1, k * f2, k * f3, n, a).expect("positive amplitudes");
        let expected = base + 20.0 * k.log10();
        prop_assert!(
            (shifted - expected).abs() <= 1e-9,
            "power({k} * f) = {shifted}, want {expected}"
        );
    }

    /// A longer responder delay or a faster responder clock can only shrink
    /// the inferred time of flight; and with zero drift the formula collapses
    /// to plain (t_round - t_reply) / 2, bit for bit.
    #[test]
    fn tof_is_monotone_in_reply_time_and_drift(
        t_round in 1e-9..1e-3f64,
        frac in 0.0..0.9f64,
        bump in 0.0..0.05f64,
        drift in 0.0..50.0f64,
        extra_drift in 0.0..50.0f64,
    ) {
        let t_reply = t_round * frac;
        let base = TwrTimestamps { t_round, t_reply, clock_drift_ppm: drift };
        let longer_reply =
            TwrTimestamps { t_round, t_reply: t_round * (frac + bump), clock_drift_ppm: drift };
        let faster_clock =
            TwrTimestamps { t_round, t_reply, clock_drift_ppm: drift + extra_drift };

        let tof = tof_from_twr(&base).expect("valid exchange");
        if let Ok(t) = tof_from_twr(&longer_reply) {
            prop_assert!(t <= tof, "longer reply grew the ToF: {t} > {tof}");
        }
        if let Ok(t) = tof_from_twr(&faster_clock) {
            prop_assert!(t <= tof, "larger drift grew the ToF: {t} > {tof}");
        }

        let undrifted = TwrTimestamps::new(t_round, t_reply);
        let exact = (t_round - t_reply) / 2.0;
        prop_assert_eq!(tof_from_twr(&undrifted).expect("valid exchange"), exact);
    }

    /// Range is a single multiply, so the linearity is exact.
    #[test]
    fn range_is_tof_times_c(tof in 0.0..1e-5f64) {
        let got = range_from_tof(tof, &Default::default()).expect("non-negative tof");
        prop_assert_eq!(got, tof * SPEED_OF_LIGHT);
    }

    /// Moving the tag by d changes any anchor's true range by at most d.
    #[test]
    fn true_range_satisfies_the_triangle_inequality(
        (ax, ay, az) in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64),
        (x1, y1, z1) in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64),
        (x2, y2, z2) in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64),
    ) {
        let anchor = cabin_locate_core::geometry::Anchor {
            id: 0,
            position: Point3::new(ax, ay, az),
        };
        let t1 = Point3::new(x1, y1, z1);
        let t2 = Point3::new(x2, y2, z2);
        let gap = (true_range(&anchor, &t1) - true_range(&anchor, &t2)).abs();
        let moved = t1.distance(&t2);
        prop_assert!(
            gap <= moved + 1e-9,
            "range gap {gap} exceeds tag displacement {moved}"
        );
    }

    /// The quantile function inverts the CDF away from the extreme tails.
    #[test]
    fn johnson_su_quantile_inverts_the_cdf(
        gamma in -2.0..2.0f64,
        delta in 0.2..3.0f64,
        xi in -5.0..5.0f64,
        lambda in 0.01..10.0f64,
        p in 1e-4..0.9999f64,
    ) {
        let params = JohnsonSuParams::new(gamma, delta, xi, lambda).expect("valid parameters");
        let x = params.quantile(p);
        let back = params.cdf(x);
        prop_assert!(
            (back - p).abs() <= 1e-9,
            "cdf(quantile({p})) = {back}"
        );
    }
}

// ── summaries and assignment ────────────────────────────────────────────

proptest! {
    /// Quantiles of one sample cannot cross, and the mean stays inside the
    /// sample's hull.
    #[test]
    fn error_stats_are_internally_ordered(
        values in prop::collection::vec(-1e6..1e6f64, 1..300),
    ) {
        let stats = ErrorStats::from_values(&values).expect("non-empty finite sample");
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-9 * (1.0 + hi.abs() + lo.abs());

        prop_assert!(stats.median <= stats.q90, "median {} > q90 {}", stats.median, stats.q90);
        prop_assert!(stats.q90 <= stats.q95, "q90 {} > q95 {}", stats.q90, stats.q95);
        prop_assert!(stats.median >= lo && stats.q95 <= hi, "quantiles escaped the sample hull");
        prop_assert!(
            stats.mean >= lo - slack && stats.mean <= hi + slack,
            "mean {} escaped [{lo}, {hi}]",
            stats.mean
        );
    }

    /// Getting the exact seat right requires getting both its row and its
    /// letter right, so the seat rate can never exceed either axis rate.
    #[test]
    fn seat_accuracy_never_exceeds_either_axis(
        pairs in prop::collection::vec(((1u32..40, 0usize..6), (1u32..40, 0usize..6)), 1..200),
    ) {
        let letters = ["A", "B", "C", "D", "E", "F"];
        let labeled: Vec<(String, String)> = pairs
            .iter()
            .map(|&((tr, tc), (ar, ac))| {
                (format!("{tr}{}", letters[tc]), format!("{ar}{}", letters[ac]))
            })
            .collect();
        let acc = axis_accuracy(&labeled).expect("non-empty pairs");
        prop_assert!(acc.seat <= acc.x, "seat rate {} exceeds row rate {}", acc.seat, acc.x);
        prop_assert!(acc.seat <= acc.y, "seat rate {} exceeds letter rate {}", acc.seat, acc.y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any estimate strictly inside the threshold disc of its seat must
    /// assign to that seat: the threshold is half the minimum spacing.
    #[test]
    fn estimates_inside_the_threshold_disc_assign_correctly(
        seat_idx in 0usize..12,
        angle in 0.0..std::f64::consts::TAU,
        radius_frac in 0.0..0.999f64,
    ) {
        let layout = &fixture().layout;
        let threshold = assignment_threshold(layout).expect("multi-seat layout");
        let seat = &layout.seats[seat_idx % layout.seats.len()];
        let r = radius_frac * threshold;
        let estimate = (seat.position.x + r * angle.cos(), seat.position.y + r * angle.sin());
        let assigned = assign_seat(estimate, layout).expect("layout has seats");
        prop_assert_eq!(
            assigned,
            seat.label.as_str(),
            "estimate {:?} at radius {} of seat {} assigned elsewhere",
            estimate,
            r,
            &seat.label
        );
    }

    /// Noiseless ranges pin the solver to the true position.
    #[test]
    fn multilateration_recovers_exact_positions(
        fx in 0.001..0.999f64,
        fy in 0.001..0.999f64,
        z in 0.3..1.4f64,
    ) {
        let layout = &fixture().layout;
        let b = &layout.bounds;
        let x = b.min_x + fx * (b.max_x - b.min_x);
        let y = b.min_y + fy * (b.max_y - b.min_y);
        let entries: Vec<(u32, f64)> = layout
            .anchors
            .iter()
            .map(|a| (a.id, a.position.distance(&Point3::new(x, y, z))))
            .collect();
        let ranges = RangeSet::new(entries, z).expect("finite ranges");
        let result = multilaterate(layout, &ranges, None).expect("solvable geometry");
        let err = ((result.x - x).powi(2) + (result.y - y).powi(2)).sqrt();
        prop_assert!(result.converged, "solver failed to converge at ({x}, {y})");
        prop_assert!(err <= 1e-6, "noiseless solve missed truth by {err} m");
    }

    /// Feature extraction keys on anchor ids, so the order samples arrive in
    /// must not change a single bit of the output, in either anchor scope.
    #[test]
    fn features_are_invariant_to_sample_order(
        record_idx in 0usize..24,
        shuffled in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let dataset = fixture();
        let record = &dataset.records[record_idx % dataset.records.len()];
        prop_assume!(record.samples.len() == shuffled.len());

        let mut reordered = record.clone();
        reordered.samples = shuffled.iter().map(|&i| record.samples[i].clone()).collect();

        for variant in [NnVariant::RangeAll, NnVariant::RangeOneAnchor] {
            let spec = fit_feature_spec(dataset, variant).expect("fixture has a train split");
            let base = build_features(record, &spec);
            let permuted = build_features(&reordered, &spec);
            prop_assert_eq!(
                &base,
                &permuted,
                "sample order changed the features under {:?} scope",
                variant
            );
        }
    }
}

// ── fitters ─────────────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Each correction nests the one before it: raw is the offset family at
    /// o = 0, and offsets are lines with slope 1. Least squares over the
    /// larger family can only match or lower the training error, anchor by
    /// anchor. A hair of floating-point slack covers near-ties.
    #[test]
    fn lr_dominates_offset_dominates_raw_on_train_mse(
        seed in any::<u64>(),
        reps in 2u32..5,
    ) {
        let layout = &fixture().layout;
        let profile = EnvironmentProfile::aircraft_cabin();
        let dataset = generate_dataset(layout, &profile, reps, seed).expect("valid inputs");

        let offset = fit_offset(&dataset, Split::Train).expect("train split exists");
        let lr = fit_lr(&dataset, Split::Train).expect("train split exists");

        // Identical accumulation order for all three methods: records in
        // dataset order, samples in anchor order, one running sum per anchor.
        let mut acc: std::collections::BTreeMap<u32, (f64, f64, f64, f64)> =
            std::collections::BTreeMap::new();
        for record in dataset.records_in(Split::Train) {
            for s in &record.samples {
                let e = acc.entry(s.anchor_id).or_insert((0.0, 0.0, 0.0, 0.0));
                let raw = s.measured_range - s.true_range;
                let off = apply_offset(&offset, s).expect("anchor known") - s.true_range;
                let lin = apply_lr(&lr, s).expect("anchor known") - s.true_range;
                e.0 += raw * raw;
                e.1 += off * off;
                e.2 += lin * lin;
                e.3 += 1.0;
            }
        }
        for (anchor, (raw, off, lin, n)) in acc {
            let slack = 1e-12 * (1.0 + raw / n);
            prop_assert!(
                off / n <= raw / n + slack,
                "anchor {anchor}: offset MSE {} exceeds raw MSE {}",
                off / n,
                raw / n
            );
            prop_assert!(
                lin / n <= off / n + slack,
                "anchor {anchor}: LR MSE {} exceeds offset MSE {}",
                lin / n,
                off / n
            );
        }
    }

    /// A campaign survives the trip to disk and back untouched: the loader
    /// reconstructs every derived field from the wire form.
    #[test]
    fn datasets_round_trip_through_jsonl(seed in any::<u64>()) {
        let layout = &fixture().layout;
        let profile = EnvironmentProfile::indoor_office();
        let dataset = generate_dataset(layout, &profile, 4, seed).expect("valid inputs");

        let dir = tempfile::tempdir().expect("create temp dir");
        let path = dir.path().join("campaign.jsonl");
        save_dataset(&dataset, &path).expect("write dataset");
        let loaded = load_dataset(&path, layout).expect("read dataset");
        prop_assert_eq!(&dataset, &loaded, "dataset changed across save/load");
    }
}
