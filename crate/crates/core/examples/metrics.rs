//! Per-class metrics and macro/pooled aggregation from confusion matrices.

use kgaudit::evaluator::{macro_aggregate, ClassMetrics, ConfusionMatrix, KappaBand};

fn main() {
    let classes = [
        ("perfect", ConfusionMatrix::new(10, 0, 0, 10)),
        ("decent", ConfusionMatrix::new(8, 2, 3, 7)),
        ("balanced", ConfusionMatrix::new(415, 85, 85, 415)),
    ];
    println!("{:<10} {:>8} {:>8} {:>8} {:>8}  band", "class", "acc", "auc", "f1", "kappa");
    let mut metrics = Vec::new();
    for (name, matrix) in classes {
        let m = ClassMetrics::from_matrix(matrix).expect("non-empty matrix");
        let auc = m.auc.map_or("-".to_string(), |a| format!("{a:.3}"));
        println!(
            "{name:<10} {:>8.3} {auc:>8} {:>8.3} {:>8.3}  {}",
            m.accuracy,
            m.f1_macro,
            m.kappa,
            KappaBand::of(m.kappa).as_str()
        );
        metrics.push(m);
    }
    let agg = macro_aggregate(metrics.iter()).expect("at least one class");
    println!("\nmacro:  {:?}", agg.macro_);
    println!("pooled: {:?}", agg.pooled);
}
