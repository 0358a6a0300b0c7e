use acle_core::acle::{filter_step, init_acle, AcleMode, AcleSettings, AcleState};
use num_complex::Complex64;
use proptest::prelude::*;

fn controller(k: f64, t: f64, d1: f64, d2: f64) -> AcleState {
    let s = AcleSettings {
        mode: AcleMode::AcLineEmulation,
        p_cons: 0.0,
        k,
        t,
        p_max: 1e3,
    };
    let p_ini = -k * (d1 - d2);
    init_acle(&s, Complex64::from_polar(1.0, d1), Complex64::from_polar(1.0, d2), p_ini).unwrap()
}

proptest! {
    /// A constant angle step ends at the static law whatever the filter.
    #[test]
    fn dc_gain(k in 0.1f64..8.0, step in -0.5f64..0.5, ti in 0usize..4) {
        let t: f64 = [0.1, 0.75, 5.0, 50.0][ti];
        let dt = 1e-3 * t.max(1.0);
        let mut c = controller(k, t, 0.3, 0.1);
        let v1 = Complex64::from_polar(1.0, 0.3 + step);
        let v2 = Complex64::from_polar(1.0, 0.1);
        let n = (20.0 * t / dt).round() as usize;
        let mut p = 0.0;
        for _ in 0..n {
            p = c.update(v1, v2, dt);
        }
        prop_assert!((p - (c.p_ini - k * step)).abs() < 1e-6);
    }

    #[test]
    fn no_filter_passes_input_through(k in 0.0f64..8.0, angles in prop::collection::vec(-1.0f64..1.0, 1..50)) {
        let mut c = controller(k, 0.0, 0.2, -0.1);
        for a in angles {
            c.update(Complex64::from_polar(0.9, 0.2 + a), Complex64::from_polar(1.0, -0.1 + a / 3.0), 1e-3);
            prop_assert_eq!(c.y, k * c.angle_difference());
        }
    }

    /// Rotating both PCC voltages by the same angle changes nothing.
    #[test]
    fn rotation_invariant(k in 0.1f64..8.0, t in 0.0f64..2.0, rot in -3.0f64..3.0,
                          path in prop::collection::vec((-0.4f64..0.4, -0.4f64..0.4), 1..40)) {
        let (d1, d2) = (0.35, -0.05);
        let mut a = controller(k, t, d1, d2);
        let mut b = controller(k, t, d1 + rot, d2 + rot);
        for (x, y) in path {
            let pa = a.update(Complex64::from_polar(1.0, d1 + x), Complex64::from_polar(1.0, d2 + y), 1e-3);
            let pb = b.update(Complex64::from_polar(1.0, d1 + x + rot), Complex64::from_polar(1.0, d2 + y + rot), 1e-3);
            prop_assert!((pa - pb).abs() < 1e-9);
        }
    }

    /// Frozen angles keep the setpoint at its initial value, as in constant-power mode.
    #[test]
    fn frozen_angles_hold_setpoint(k in 0.0f64..8.0, t in 0.0f64..50.0, d1 in -1.0f64..1.0, d2 in -1.0f64..1.0) {
        let mut c = controller(k, t, d1, d2);
        for _ in 0..100 {
            let p = c.update(Complex64::from_polar(1.0, d1), Complex64::from_polar(1.0, d2), 1e-3);
            prop_assert_eq!(p, c.p_ini);
        }
    }

    /// The trapezoidal update keeps a constant input's equilibrium exactly.
    #[test]
    fn filter_equilibrium(u in -5.0f64..5.0, t in 1e-3f64..100.0, dt in 1e-4f64..1e-2) {
        prop_assert!((filter_step(u, u, u, t, dt) - u).abs() <= 1e-12 * u.abs().max(1.0));
    }
}

#[test]
fn reinitialization_is_idempotent() {
    let a = controller(2.0, 0.75, 0.4, 0.1);
    let b = init_acle(
        &a.settings,
        Complex64::from_polar(1.0, 0.4),
        Complex64::from_polar(1.0, 0.1),
        a.p_ini,
    )
    .unwrap();
    assert_eq!(a, b);
}
