use proptest::prelude::*;

use super::*;

fn block(w: u32, h: u32, x0: u32, y0: u32, bw: u32, bh: u32) -> Mask {
    Mask::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh).unwrap()
}

// Brute force: boundary by explicit neighbor enumeration, distances by
// checking every pair of boundary pixels.
fn oracle_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let set = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as u32, y as u32);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if set(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !set(x + dx, y + dy)) {
                out.push((x, y));
            }
        }
    }
    out
}

fn oracle_f(a: &Mask, b: &Mask, tol: u32) -> f64 {
    let (ab, bb) = (oracle_boundary(a), oracle_boundary(b));
    match (ab.is_empty(), bb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let t2 = tol as i64 * tol as i64;
    let near = |p: &(i64, i64), set: &[(i64, i64)]| set.iter().any(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2) <= t2);
    let p = ab.iter().filter(|x| near(x, &bb)).count() as f64 / ab.len() as f64;
    let r = bb.iter().filter(|x| near(x, &ab)).count() as f64 / bb.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn oracle_j(a: &Mask, b: &Mask) -> f64 {
    let (mut i, mut u) = (0u32, 0u32);
    for (x, y) in (0..a.height()).flat_map(|y| (0..a.width()).map(move |x| (x, y))) {
        let (p, q) = (a.get(x, y), b.get(x, y));
        i += u32::from(p && q);
        u += u32::from(p || q);
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

#[test]
fn jaccard_examples() {
    let a = block(4, 4, 0, 0, 2, 2);
    assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
    assert_eq!(jaccard(&a, &block(4, 4, 2, 2, 2, 2)).unwrap(), 0.0);
    let b = block(4, 4, 1, 0, 2, 2);
    assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let empty = Mask::new(4, 4).unwrap();
    assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
    assert!(matches!(jaccard(&a, &Mask::new(3, 4).unwrap()), Err(MetricsError::Mask(_))));
}

#[test]
fn boundary_f_examples() {
    let a = block(8, 8, 2, 2, 3, 3);
    assert_eq!(boundary_f(&a, &a, 0).unwrap(), 1.0);
    let empty = Mask::new(8, 8).unwrap();
    assert_eq!(boundary_f(&empty, &a, 3).unwrap(), 0.0);
    assert_eq!(boundary_f(&empty, &empty, 3).unwrap(), 1.0);
    // single pixels two apart, tolerance one
    let p = block(8, 8, 1, 1, 1, 1);
    let q = block(8, 8, 3, 1, 1, 1);
    assert_eq!(boundary_f(&p, &q, 1).unwrap(), 0.0);
    assert_eq!(boundary_f(&p, &q, 2).unwrap(), 1.0);
}

#[test]
fn boundary_is_the_rim() {
    let a = block(5, 5, 0, 0, 3, 3);
    let rim = boundary(&a);
    assert_eq!(rim.area(), 8);
    assert!(!rim.get(1, 1));
}

#[test]
fn default_tolerance_matches_davis_scale() {
    // 854x480 diagonal is ~979.6 px
    assert_eq!(default_tolerance(854, 480), 8);
    assert_eq!(default_tolerance(16, 16), 1);
}

#[test]
fn tolerance_parsing() {
    assert_eq!("auto".parse::<Tolerance>().unwrap(), Tolerance::Auto);
    assert_eq!("3".parse::<Tolerance>().unwrap(), Tolerance::Pixels(3));
    assert!("x".parse::<Tolerance>().is_err());
}

#[test]
fn evaluate_identical_and_empty() {
    let gt: Vec<_> = (0..4)
        .map(|i| LabelMap::from_fn(8, 8, |x, y| if x == i && y < 3 { 1 } else if y > 5 { 2 } else { 0 }).unwrap())
        .collect();
    let seq = GroundTruthSequence::new("s", gt.clone()).unwrap();
    let r = evaluate(&gt, &seq, &EvalOptions::default()).unwrap();
    assert_eq!((r.mean_j, r.mean_f, r.avg), (1.0, 1.0, 1.0));
    assert_eq!(r.objects[0].frames, vec![1, 2, 3]);

    let blank: Vec<_> = (0..4).map(|_| LabelMap::new(8, 8).unwrap()).collect();
    let r = evaluate(&blank, &seq, &EvalOptions::default()).unwrap();
    assert!(r.objects.iter().all(|o| o.j.iter().all(|&j| j == 0.0)));
}

#[test]
fn evaluate_errors() {
    let gt: Vec<_> = (0..2).map(|_| LabelMap::new(4, 4).unwrap()).collect();
    let seq = GroundTruthSequence::new("s", gt.clone()).unwrap();
    assert!(matches!(
        evaluate(&gt[..1], &seq, &EvalOptions::default()),
        Err(MetricsError::LengthMismatch { .. })
    ));
    let wrong = vec![LabelMap::new(4, 4).unwrap(), LabelMap::new(5, 4).unwrap()];
    assert!(matches!(evaluate(&wrong, &seq, &EvalOptions::default()), Err(MetricsError::Mask(_))));
    let one = GroundTruthSequence::new("s", gt[..1].to_vec()).unwrap();
    assert_eq!(
        evaluate(&gt[..1], &one, &EvalOptions::default()),
        Err(MetricsError::NothingToEvaluate)
    );
}

#[test]
fn constant_offset_matches_enumeration() {
    let gt: Vec<_> = (0..5).map(|i| LabelMap::from_fn(16, 16, |x, y| u16::from(x >= i && x < i + 4 && y < 4)).unwrap()).collect();
    let preds: Vec<_> = (0..5)
        .map(|i| LabelMap::from_fn(16, 16, |x, y| u16::from(x >= i + 2 && x < i + 6 && y < 4)).unwrap())
        .collect();
    let seq = GroundTruthSequence::new("s", gt.clone()).unwrap();
    let r = evaluate(&preds, &seq, &EvalOptions::default()).unwrap();
    // 8 shared pixels of 24 in the union, every frame
    assert!((r.mean_j - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn aggregate_and_table() {
    let mk = |name: &str, j: f64, f: f64| EvalReport {
        sequence: name.into(),
        tolerance: 1,
        objects: Vec::new(),
        mean_j: j,
        mean_f: f,
        avg: (j + f) / 2.0,
    };
    let reports = vec![mk("a", 1.0, 0.5), mk("bb", 0.5, 0.5)];
    let s = aggregate(&reports);
    assert_eq!((s.mean_j, s.mean_f, s.avg), (0.75, 0.5, 0.625));
    let table = format_table(&reports, &s);
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean"));
    assert!(lines[3].contains("62.5"));
}

fn arb_mask(w: u32, h: u32) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| Mask::from_bits(w, h, bits).unwrap())
}

fn arb_labels(w: u32, h: u32, max: u16) -> impl Strategy<Value = LabelMap> {
    proptest::collection::vec(0..=max, (w * h) as usize).prop_map(move |l| LabelMap::from_labels(w, h, l).unwrap())
}

proptest! {
    #[test]
    fn j_matches_oracle_and_is_symmetric(a in arb_mask(9, 7), b in arb_mask(9, 7)) {
        let j = jaccard(&a, &b).unwrap();
        prop_assert_eq!(j, jaccard(&b, &a).unwrap());
        prop_assert!((j - oracle_j(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn f_matches_oracle_symmetric_and_monotone(a in arb_mask(9, 7), b in arb_mask(9, 7), tol in 0u32..4) {
        let f = boundary_f(&a, &b, tol).unwrap();
        prop_assert!((f - oracle_f(&a, &b, tol)).abs() < 1e-12);
        prop_assert!((f - boundary_f(&b, &a, tol).unwrap()).abs() < 1e-12);
        prop_assert!(boundary_f(&a, &b, tol + 1).unwrap() >= f - 1e-12);
    }

    #[test]
    fn avg_is_mean_of_j_and_f(
        gt in proptest::collection::vec(arb_labels(8, 8, 3), 2..5),
        seed in any::<u64>(),
    ) {
        let preds: Vec<_> = gt.iter().map(|g| g.relabel(|l| ((l as u64 + seed) % 4) as u16)).collect();
        let seq = GroundTruthSequence::new("p", gt).unwrap();
        let r = evaluate(&preds, &seq, &EvalOptions::default()).unwrap();
        prop_assert_eq!(r.avg, (r.mean_j + r.mean_f) / 2.0);
        for v in [r.mean_j, r.mean_f, r.avg] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
