//! Fixture corpus and a server bound to an ephemeral port.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use trajlab_core::corpus::Corpus;
use trajlab_core::dact::DactOptions;
use trajlab_core::synth::{from_series, trajectory_from_speeds};
use trajlab_service::{Store, StoreConfig};

pub const SPEEDUP_FIXTURE: [f64; 13] = [10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 18.0, 16.0, 14.0, 12.0, 10.0, 8.0, 6.0];

/// `count` trips named `trip-01`.. plus a speed-up peak trip `peak` and a
/// short slow-down trip `strict-only` that only the strict profile flags.
pub fn write_fixture_corpus(root: &Path, count: usize) {
    let opts = DactOptions::default();
    for i in 1..=count {
        let speeds: Vec<f64> = (0..120).map(|s| 30.0 + ((s + i) % 17) as f64).collect();
        let headings: Vec<f64> = (0..120).map(|s| ((s * i) % 360) as f64).collect();
        let t = from_series(&format!("trip-{i:02}"), &speeds, &headings);
        Corpus::save_trip(root, &t, None, &opts).unwrap();
    }
    let mut peak = trajectory_from_speeds(&SPEEDUP_FIXTURE);
    peak.trip_id = "peak".into();
    Corpus::save_trip(root, &peak, None, &opts).unwrap();
    let mut slow = trajectory_from_speeds(&[30.0, 28.0, 26.0, 24.0, 23.0]);
    slow.trip_id = "strict-only".into();
    Corpus::save_trip(root, &slow, None, &opts).unwrap();
}

pub fn open_store(root: &Path) -> Arc<Store> {
    Arc::new(Store::open(StoreConfig::new(root)).unwrap())
}

/// Starts the service on 127.0.0.1:0 and returns its base URL.
pub async fn spawn(store: Arc<Store>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(trajlab_service::serve(listener, store));
    format!("http://{addr}")
}
