use mlmc_demo::{convergence, expdecay_curve, level_view};

#[test]
fn expdecay_curve_tracks_prediction() {
    let pts = expdecay_curve(2000, 0.05, &[5, 10, 20, 5000]).unwrap();
    assert_eq!(pts.len(), 3);
    for p in &pts {
        assert!(
            p.measured / p.predicted > 0.5 && p.measured / p.predicted < 2.0,
            "{p:?}"
        );
        assert!(p.measured < p.rand_k);
    }
}

#[test]
fn level_view_top_k_example() {
    let view = level_view(&[4.0, -3.0], "top_k", 1).unwrap();
    let probs: Vec<f64> = view.levels.iter().map(|l| l.prob).collect();
    assert_eq!(probs, vec![4.0 / 7.0, 3.0 / 7.0]);
    // (4 + 3)^2 - 25 over 25
    assert!((view.omega_hat - 24.0 / 25.0).abs() < 1e-12);
    assert!(view.geometric_omega_hat.is_none());
    assert!(level_view(&[1.0], "nope", 1).unwrap_err().contains("nope"));
}

#[test]
fn level_view_fixed_point_has_geometric_reference() {
    let view = level_view(&[0.5, -0.25, 0.125], "fixed_point", 1).unwrap();
    assert_eq!(view.levels.len(), 63);
    assert!(view.geometric_omega_hat.unwrap() >= view.omega_hat);
}

#[test]
fn convergence_curves_share_a_start() {
    let curves = convergence(200, 2, 0.05, 5, 300, 1.0).unwrap();
    assert_eq!(curves.len(), 3);
    let start = curves[0].gap[0];
    assert!(curves.iter().all(|c| c.gap[0] == start && c.bits[0] == 0));
    assert!(curves[0].gap.last().unwrap() < &start);
}
