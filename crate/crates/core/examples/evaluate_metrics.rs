//! The clustering and detection metrics on small hand-checkable inputs.

use intent_discovery::eval::{self, NmiMean};
use intent_discovery::Result;

pub struct Summary {
    pub purity: f64,
    pub pairwise_f1: f64,
    pub nmi: f64,
    pub detection_f1: f64,
}

pub fn run_example() -> Result<Summary> {
    // clusters {a,a,b} and {b,b}
    let pred = [0, 0, 0, 1, 1];
    let truth = ["a", "a", "b", "b", "b"];
    let purity = eval::purity(&pred, &truth);
    let pairwise_f1 = eval::pairwise_f1(&pred, &truth);
    let nmi = eval::nmi(&pred, &truth);
    println!("purity          {purity:.4}");
    println!("pairwise F1     {pairwise_f1:.4}");
    println!("NMI arithmetic  {nmi:.4}");
    println!("NMI geometric   {:.4}", eval::nmi_with(&pred, &truth, NmiMean::Geometric));
    println!("BCubed F1       {:.4}", eval::bcubed_f1(&pred, &truth));

    // three hits, one false alarm, one miss
    let predicted = [true, true, true, true, false, false];
    let actual = [true, true, true, false, true, false];
    let detection_f1 = eval::detection_f1(&predicted, &actual);
    println!("detection F1    {detection_f1:.4}");
    Ok(Summary {
        purity,
        pairwise_f1,
        nmi,
        detection_f1,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
