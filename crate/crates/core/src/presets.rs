//! Parameter sets of the fitted device and of the ideal model.

use num_complex::Complex64;

use crate::dynamics::BlochParams;
use crate::model::ModelParams;
use crate::sigproc::SignalAmplitudes;

/// Ideal `p = 10` chain used for the edge-state illustrations.
pub fn fig1() -> ModelParams {
    ModelParams {
        p: 10,
        v: 37.5,
        t1: 120.0,
        t2: 150.0,
        tq: 62.5,
        vq: -37.5,
        vm: 0.0,
        ..Default::default()
    }
}

/// Fitted `p = 4` device with both ports at `Σ = −18j MHz`.
pub fn fig3() -> ModelParams {
    ModelParams {
        p: 4,
        v: 40.0,
        t1: 230.0,
        t2: 280.0,
        tq: 130.0,
        vq: 0.0,
        vm: 590.0,
        ..Default::default()
    }
    .with_ports(Complex64::new(0.0, -18.0))
}

/// The fitted device with the qubit on the leftward working point `VQ = −V`.
pub fn fig4() -> ModelParams {
    let p = fig3();
    p.with_vq(-p.v)
}

pub const NAMES: [&str; 5] = ["fig1", "fig3", "fig4", "fig5", "appc"];

/// Model parameters of a named preset. `fig5` and `appc` reuse the fitted device.
pub fn model(name: &str) -> Option<ModelParams> {
    match name {
        "fig1" => Some(fig1()),
        "fig3" => Some(fig3()),
        "fig4" | "fig5" | "appc" => Some(fig4()),
        _ => None,
    }
}

/// Two-level parameters of the leftward Rabi measurement: σz decay 130 ns,
/// σ− decay 260 ns, emission only into port L, Rabi frequency 10 MHz.
pub fn fig5_bloch() -> BlochParams {
    BlochParams {
        rabi_freq: 10.0,
        t1: 130.0,
        t2: 260.0,
        detuning: 0.0,
        w_left: 1.0,
        w_right: 0.0,
    }
}

/// Measured port amplitudes of the two edge states (a.u.).
pub fn appc_amplitudes() -> SignalAmplitudes {
    SignalAmplitudes {
        stds: [0.3; 4],
        ..SignalAmplitudes::new(108.2, 0.3, 0.7, 54.5)
    }
}
