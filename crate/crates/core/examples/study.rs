//! Runs the five-arm desk study and prints per-arm accuracy.
//!
//! `cargo run --release -p pdistill --example study [num_seeds]`

use pdistill::experiment::{run_study, standard_arms, StudyConfig};

fn main() -> pdistill::Result<()> {
    let mut cfg = StudyConfig::desk();
    if let Some(n) = std::env::args().nth(1) {
        let n: u64 = n.parse().expect("number of seeds");
        cfg.seeds = (0..n).collect();
    }
    let report = run_study(&cfg, &standard_arms())?;
    println!(
        "teacher dev {:.4}  reduced-data dev {:.4}  ood {:.4}",
        report.teacher_dev_accuracy, report.teacher_low_dev_accuracy, report.teacher_ood_accuracy
    );
    print!("{}", report.to_table());
    println!("{:.1}s", report.wall_time_secs);
    Ok(())
}
