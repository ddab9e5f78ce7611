use narrowfront::channel::{Cell, ChannelShape};
use narrowfront::graph::{build_graph, EdgeKind, VertexKind};
use narrowfront::profile::WidthProfile;
use narrowfront::walker::{estimate_q, path_rng, sample_hit, Walker, WalkerConfig};

fn cell(alpha: f64, beta: f64, gamma: f64, r: f64) -> Cell {
    Cell {
        spine_length: 1.0,
        spine_profile: WidthProfile::constant(alpha, 1.0),
        wing_r: r,
        wing_profile: WidthProfile::constant(gamma, r.abs()),
        alpha,
        beta,
        gamma,
    }
}

/// Widths 2 → 1 at the first junction with a width-1 wing.
fn narrowing() -> ChannelShape {
    let pos = vec![cell(2.0, 1.0, 1.0, 0.5), cell(1.0, 1.0, 1e-15, 0.5), cell(1.0, 1.0, 1e-15, 0.5)];
    let neg = vec![cell(2.0, 2.0, 1e-15, 0.5), cell(2.0, 2.0, 1e-15, 0.5)];
    ChannelShape::from_outward(pos, neg)
}

#[test]
fn vertex_choice_follows_gluing_weights() {
    let shape = narrowing();
    let g = build_graph(&shape).unwrap();
    let v = g.vertices.iter().position(|v| v.kind == VertexKind::Interior && v.junction.is_some_and(|j| j.2 == 1.0)).unwrap();
    let w = Walker::new(&g, WalkerConfig { dt: 1e-4, ..Default::default() }).unwrap();
    let inc = &g.vertices[v].incident;
    let total: f64 = inc.iter().map(|i| i.weight).sum();
    let n = 100_000;
    let mut counts = vec![0usize; inc.len()];
    let mut rng = path_rng(17, 0);
    for _ in 0..n {
        let mut s = w.vertex_state(v);
        w.step(&mut s, &mut rng);
        counts[inc.iter().position(|i| i.edge == s.edge).unwrap()] += 1;
    }
    let chi2: f64 = inc
        .iter()
        .zip(&counts)
        .map(|(i, &c)| {
            let e = n as f64 * i.weight / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let mut probs: Vec<f64> = inc.iter().map(|i| i.weight / total).collect();
    probs.sort_by(f64::total_cmp);
    assert_eq!(probs, vec![0.25, 0.25, 0.5]);
    // χ² with 2 degrees of freedom, 1% level
    assert!(chi2 < 9.21, "{chi2} {counts:?}");
}

#[test]
fn thread_count_does_not_change_samples() {
    let g = build_graph(&narrowing()).unwrap();
    let cfg = WalkerConfig { dt: 1e-3, horizon: 20.0, seed: 4, max_censoring: 1.0, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| sample_hit(&g, 0.5, 2.5, &cfg, 200).unwrap())
    };
    assert_eq!(run(1).samples, run(3).samples);
}

#[test]
fn halving_dt_stays_within_error() {
    let g = build_graph(&ChannelShape::flat(1.0, 1.0, 8)).unwrap();
    let est = |dt| {
        let cfg = WalkerConfig { dt, horizon: 200.0, seed: 21, ..Default::default() };
        estimate_q(&g, 0.0, 2.0, -0.5, &cfg, 4000).unwrap()
    };
    let (a, b) = (est(2e-3), est(1e-3));
    let se = (a.se * a.se + b.se * b.se).sqrt();
    assert!((a.estimate - b.estimate).abs() < se, "{a:?} {b:?}");
}

#[test]
fn wings_only_delay_passage() {
    let alt = |k: usize| if k.is_multiple_of(2) { cell(1.0, 0.5, 0.5, 0.75) } else { cell(0.5, 1.0, 0.5, -0.75) };
    let shape = ChannelShape::from_outward((0..6).map(alt).collect(), (0..6).map(alt).collect());
    let winged = build_graph(&shape).unwrap();
    // Same spine and junction weights with the side channels cut off.
    let mut bare = winged.clone();
    for v in &mut bare.vertices {
        v.incident.retain(|i| winged.edges[i.edge].kind == EdgeKind::Spine);
    }
    let d: f64 = shape.positive[..2].iter().map(|c| c.spine_length).sum();
    let cfg = WalkerConfig { dt: 1e-3, horizon: 200.0, seed: 8, ..Default::default() };
    let w = estimate_q(&winged, 0.0, d, -0.5, &cfg, 3000).unwrap();
    let b = estimate_q(&bare, 0.0, d, -0.5, &cfg, 3000).unwrap();
    assert!(w.estimate < b.estimate, "{w:?} {b:?}");
}
