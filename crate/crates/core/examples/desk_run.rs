//! Trains the complete model on the default synthetic dataset and prints
//! the GZSL scores.
//!
//!     cargo run --release --example desk_run

use zslc::data::{generate_synthetic, SynthSpec};
use zslc::losses::Preset;
use zslc::nn::NetConfig;
use zslc::recog::recognize;
use zslc::train::{fit, Ablation};

fn main() -> zslc::Result<()> {
    let ds = generate_synthetic(&SynthSpec::default())?;
    let mut hp = Preset::Desk.hyper_params();
    Ablation::S4.apply(&mut hp);
    let state = fit(&ds, &hp, &NetConfig::desk(ds.d_x(), ds.d_h()))?;
    let m = recognize(&state, &ds, true)?.metrics;
    println!("U = {:.1}  S = {:.1}  H = {:.1}", m.unseen, m.seen, m.harmonic);
    Ok(())
}
