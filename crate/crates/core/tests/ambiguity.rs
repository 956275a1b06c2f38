use hrpe_core::array::Direction;
use hrpe_core::config::{ScenarioConfig, ScenarioKind};
use hrpe_core::eadf::ambiguity;
use hrpe_core::impairments::PhaseNoiseModel;
use hrpe_core::scenario::Setup;

/// Cross-ambiguity between the ideal and a 3λ-misaligned calibration in
/// the horizontal plane: for every true direction the best match stays
/// strong and sits close to it. A planar array cannot tell front from
/// back, so `φ` and `π - φ` count as the same place; the grid also skips
/// endfire, where half-wavelength spacing aliases `±π/2`.
#[test]
fn misaligned_cross_ambiguity_keeps_a_diagonal_ridge() {
    let cfg = ScenarioConfig::defaults(ScenarioKind::MisalignmentSweep);
    let setup = Setup::new(&cfg).unwrap();
    let distorted = setup.calibrated_eadf(&cfg, [3.0; 3], &PhaseNoiseModel::disabled(), 0).unwrap();
    let ideal = setup.ideal.gated(distorted.gate()).unwrap();
    let el = std::f64::consts::FRAC_PI_2;
    let mut worst_peak = f64::INFINITY;
    let mut worst_offset = 0.0f64;
    for i in 0..24 {
        let a1 = -172.5 + 15.0 * i as f64;
        let d1 = Direction::new(a1.to_radians(), el);
        let (best, at) = (-720..720)
            .map(|k| {
                let a2 = k as f64 / 4.0;
                let v = ambiguity(|d| ideal.evaluate(d), |d| distorted.evaluate(d), d1, Direction::new(a2.to_radians(), el)).unwrap().norm();
                (v, a2)
            })
            .fold((0.0, 0.0), |m, x| if x.0 > m.0 { x } else { m });
        let wrap = |x: f64| ((x + 540.0) % 360.0 - 180.0).abs();
        let off = wrap(at - a1).min(wrap(180.0 - at - a1));
        worst_peak = worst_peak.min(best);
        worst_offset = worst_offset.max(off);
    }
    assert!(worst_peak > 0.9, "weakest ridge value {worst_peak}");
    assert!(worst_offset < 5.0, "ridge leaves the diagonal by {worst_offset} deg");
}
