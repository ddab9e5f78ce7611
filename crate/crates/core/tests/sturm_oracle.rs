use narrowfront::channel::{sample_channel, Cell, ChannelShape, GeneratorParams, Side};
use narrowfront::oracle::dense_junction_solve;
use narrowfront::profile::WidthProfile;
use narrowfront::sturm::{self, cell_ends, hitting_transform, transfer_cell, DepthPolicy, Method};

fn unit_cell(r: f64) -> Cell {
    Cell {
        spine_length: 1.0,
        spine_profile: WidthProfile::constant(1.0, 1.0),
        wing_r: r,
        wing_profile: WidthProfile::constant(1e-12, r.abs()),
        alpha: 1.0,
        beta: 1.0,
        gamma: 1e-12,
    }
}

#[test]
fn three_cell_product_matches_dense_solve() {
    let shape = sample_channel(&GeneratorParams::default(), 17, 3).unwrap();
    let cells = shape.outward(Side::Plus);
    for lambda in [-0.1, -1.0, -5.0] {
        let dense = dense_junction_solve(&cells, lambda).unwrap();
        let policy = DepthPolicy { fixed: Some(3), ..Default::default() };
        let r = hitting_transform(&shape, lambda, Side::Plus, &policy).unwrap();
        let mut prod = 1.0;
        for (j, rho) in r.rho.iter().enumerate() {
            prod *= rho;
            let rel = (prod - dense[j]).abs() / dense[j];
            assert!(rel < 1e-9, "λ={lambda} j={j} {prod} vs {}", dense[j]);
        }
    }
}

#[test]
fn unit_width_depth_thirty_matches_dense_solve() {
    let cells: Vec<Cell> = (0..30).map(|k| unit_cell(if k % 2 == 0 { 0.5 } else { -0.5 })).collect();
    let shape = ChannelShape::from_outward(cells.clone(), cells.clone());
    let dense = dense_junction_solve(&cells, -0.5).unwrap();
    let policy = DepthPolicy { fixed: Some(30), ..Default::default() };
    let r = hitting_transform(&shape, -0.5, Side::Plus, &policy).unwrap();
    for k in 0..5 {
        let ratio = if k == 0 { dense[0] } else { dense[k] / dense[k - 1] };
        assert!((r.rho[k] - ratio).abs() < 1e-9 * ratio, "{k}");
        assert!((r.cells[k].x - r.cells[k].x_s).abs() < 1e-12);
    }
}

#[test]
fn reversed_wings_need_tip_normalisation() {
    // For r < 0 the closed form uses the wing's log-derivative at the
    // attachment. Normalising at the attachment would zero it; only the
    // tip-normalised solution reproduces the dense solve.
    let lambda = -1.0;
    let mut checked = 0;
    for seed in 0..40 {
        let shape = sample_channel(&GeneratorParams::default(), seed, 2).unwrap();
        let cells = shape.outward(Side::Plus);
        if cells[0].wing_r > 0.0 {
            continue;
        }
        let dense = dense_junction_solve(&cells, lambda).unwrap();
        let a = cell_ends(&cells[0], -lambda, Method::Ode).unwrap();
        let b = cell_ends(&cells[1], -lambda, Method::Ode).unwrap();
        let t = transfer_cell(1, lambda, &cells[0], a, &b.spine).unwrap();
        assert!((1.0 / t.y - dense[0]).abs() < 1e-9 * dense[0]);
        let (ul, sl) = (a.spine.end.u, a.spine.end.s);
        let wing_term = cells[0].gamma * (ul / a.wing.end.u) * (a.wing.end.dpu / cells[0].gamma) * sl;
        let y_attachment = t.y_s - wing_term;
        assert!((1.0 / y_attachment - dense[0]).abs() > 1e-4 * dense[0]);
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn series_and_ode_agree_on_sampled_edges() {
    let shape = sample_channel(&GeneratorParams::default(), 5, 10).unwrap();
    for (i, c) in shape.positive.iter().enumerate() {
        for lambda in [-2.0, -0.7, 0.3, 0.5] {
            for w in [&c.spine_profile, &c.wing_profile] {
                let a = sturm::fundamental(w, lambda, Method::Ode).unwrap();
                let b = sturm::fundamental(w, lambda, Method::Series).unwrap();
                let (ea, eb) = (a.end(), b.end());
                assert!((ea.u - eb.u).abs() < 1e-8 * ea.u.abs().max(1.0), "{i} {lambda}");
                assert!((ea.dpu - eb.dpu).abs() < 1e-8 * ea.dpu.abs().max(1.0), "{i} {lambda}");
            }
        }
    }
}
