//! Scores hand-made predictions with the task metrics: macro F1 over
//! expressions, thresholded macro F1 over action units and mean CCC over
//! valence/arousal, summed into the multi-task score.
//!
//! cargo run --example evaluate_metrics

use affect_mtl::metrics::{mtl_score, Gold, Prediction};

fn main() {
    let preds = [
        Prediction {
            expression: 0,
            au_probs: [0.9; 12],
            va: [0.5, 0.2],
        },
        Prediction {
            expression: 1,
            au_probs: [0.2; 12],
            va: [-0.3, 0.4],
        },
        Prediction {
            expression: 1,
            au_probs: [0.7; 12],
            va: [0.1, -0.5],
        },
        Prediction {
            expression: 3,
            au_probs: [0.4; 12],
            va: [-0.6, -0.1],
        },
    ];
    let golds = [
        Gold {
            expression: Some(0),
            action_units: Some([1; 12]),
            va: Some([0.6, 0.1]),
        },
        Gold {
            expression: Some(1),
            action_units: Some([0; 12]),
            va: Some([-0.2, 0.5]),
        },
        Gold {
            expression: Some(2),
            action_units: Some([1; 12]),
            va: None,
        },
        Gold {
            expression: None,
            action_units: Some([1; 12]),
            va: Some([-0.5, 0.0]),
        },
    ];
    let s = mtl_score(&preds, &golds);
    println!(
        "expression F1 per class {:?}",
        s.exp_f1
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
    );
    println!("P_EXP {:.4}  P_AU {:.4}", s.p_exp, s.p_au);
    println!(
        "CCC valence {:.4}  arousal {:.4}  P_VA {:.4}",
        s.ccc_valence, s.ccc_arousal, s.p_va
    );
    println!("P_MTL {:.4}", s.p_mtl);
    println!("{}", serde_json::to_string(&s).expect("serializable"));
}
