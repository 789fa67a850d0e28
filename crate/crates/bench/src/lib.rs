//! Shared fixtures for the receiver benchmarks.
//!
//! Receivers use freshly initialized weights: inference cost does not depend on
//! training, so the benches need no checkpoint.

use gfpic_core::evalkit::{test_samples, SparseMethod, SparseReceiver};
use gfpic_core::picnet::{PicKind, PicModel};
use gfpic_core::prep::{fit_standardizer, ScaledCodebook};
use gfpic_core::sysmodel::Sample;
use gfpic_core::trainer::{system_codebook, FcnnModel};
use gfpic_core::{Scheme, SystemConfig};

/// Desk-scale system: K=10, tau_coh=10, J=2, eps=0.1, rho=10 dBm.
pub fn system(kind: PicKind) -> SystemConfig {
    let mut sys = SystemConfig {
        scheme: kind.scheme(),
        n_devices: 10,
        coherence_len: 10,
        n_bits: 2,
        activity_prob: 0.1,
        tx_power_dbm: 10.0,
        fcnn_hidden_layers: 4,
        fcnn_width: 256,
        ..SystemConfig::default()
    };
    sys.seq_len = sys.max_seq_len();
    sys.n_stages = match kind {
        PicKind::PilotOnly => 7,
        PicKind::DataAided => 3,
        PicKind::NonCoherent => 4,
    };
    sys
}

pub fn samples(sys: &SystemConfig, n: usize) -> Vec<Sample> {
    let cb = system_codebook(sys).expect("valid system");
    test_samples(sys, &cb, n, 1, 0).expect("valid system")
}

pub fn pic(kind: PicKind) -> (PicModel, Vec<Sample>) {
    let sys = system(kind);
    let data = samples(&sys, 2048);
    let std = fit_standardizer(&data).expect("non-degenerate data");
    let cb = system_codebook(&sys).expect("valid system");
    let model = PicModel::new(kind, &sys, std, ScaledCodebook::new(cb, &std), 3).expect("valid system");
    (model, data)
}

pub fn fcnn() -> (FcnnModel, Vec<Sample>) {
    let sys = system(PicKind::PilotOnly);
    let data = samples(&sys, 2048);
    let std = fit_standardizer(&data).expect("non-degenerate data");
    let cb = system_codebook(&sys).expect("valid system");
    (FcnnModel::new(&sys, std, cb, 3).expect("valid system"), data)
}

pub fn sparse(method: SparseMethod, scheme: Scheme) -> (SparseReceiver, Vec<Sample>) {
    let kind = match scheme {
        Scheme::Coherent => PicKind::PilotOnly,
        Scheme::NonCoherent => PicKind::NonCoherent,
    };
    let sys = system(kind);
    let cb = system_codebook(&sys).expect("valid system");
    let data = samples(&sys, 256);
    (SparseReceiver::new(method, &sys, cb).expect("valid system"), data)
}
