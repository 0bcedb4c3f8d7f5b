//! Comma-separated report tables. Each starts with `#` comment lines that
//! carry the resolved configuration.

use super::eval::{AttentionReport, ConfusionMatrix, Prediction};
use super::trainer::EpochStats;
use crate::data::{ACTION_LABELS, GROUP_LABELS};

fn table(comments: &[String], header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&body).expect("utf-8 fields"));
    out
}

fn label(names: &[&str], i: usize) -> String {
    names
        .get(i)
        .map_or_else(|| i.to_string(), |s| s.to_string())
}

pub fn history_table(comments: &[String], history: &[EpochStats]) -> String {
    let header = ["epoch", "lr", "L_MT", "L_GA", "L_IA", "train_acc"]
        .map(String::from)
        .to_vec();
    let rows = history
        .iter()
        .map(|s| {
            vec![
                s.epoch.to_string(),
                s.lr.to_string(),
                s.total.to_string(),
                s.group.to_string(),
                s.action.to_string(),
                s.train_acc.to_string(),
            ]
        })
        .collect();
    table(comments, header, rows)
}

/// Rows are true labels, columns predicted labels.
pub fn confusion_table(comments: &[String], m: &ConfusionMatrix) -> String {
    let mut header = vec!["true\\predicted".to_string()];
    header.extend((0..m.classes()).map(|i| label(&GROUP_LABELS, i)));
    let rows = m
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![label(&GROUP_LABELS, i)];
            row.extend(r.iter().map(u64::to_string));
            row
        })
        .collect();
    table(comments, header, rows)
}

/// One row per sample: id, predicted group, group probabilities, then the
/// predicted action of every person.
pub fn predictions_table(comments: &[String], preds: &[Prediction]) -> String {
    let classes = preds
        .first()
        .map_or(GROUP_LABELS.len(), |p| p.group_probs.len());
    let persons = preds.first().map_or(0, |p| p.actions_pred.len());
    let mut header = vec!["sample_id".to_string(), "group".to_string()];
    header.extend((0..classes).map(|i| format!("p_{}", label(&GROUP_LABELS, i))));
    header.extend((0..persons).map(|i| format!("action_{i}")));
    let rows = preds
        .iter()
        .map(|p| {
            let mut row = vec![p.id.clone(), label(&GROUP_LABELS, p.group_pred)];
            row.extend(p.group_probs.iter().map(f64::to_string));
            row.extend(p.actions_pred.iter().map(|&a| label(&ACTION_LABELS, a)));
            row
        })
        .collect();
    table(comments, header, rows)
}

pub fn temporal_table(comments: &[String], r: &AttentionReport) -> String {
    let header = ["sample_id", "person", "frame", "weight"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for (id, per_person) in r.ids.iter().zip(&r.temporal) {
        for (p, weights) in per_person.iter().enumerate() {
            for (t, w) in weights.iter().enumerate() {
                rows.push(vec![
                    id.clone(),
                    p.to_string(),
                    t.to_string(),
                    w.to_string(),
                ]);
            }
        }
    }
    table(comments, header, rows)
}

pub fn spatial_table(comments: &[String], r: &AttentionReport) -> String {
    let header = ["sample_id", "person", "weight"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for (id, weights) in r.ids.iter().zip(&r.spatial) {
        for (p, w) in weights.iter().enumerate() {
            rows.push(vec![id.clone(), p.to_string(), w.to_string()]);
        }
    }
    table(comments, header, rows)
}

pub fn mean_temporal_table(comments: &[String], r: &AttentionReport) -> String {
    let header = ["frame", "weight"].map(String::from).to_vec();
    let rows = r
        .mean_temporal
        .iter()
        .enumerate()
        .map(|(t, w)| vec![t.to_string(), w.to_string()])
        .collect();
    table(comments, header, rows)
}

/// Parses a table written by this module back into its header and rows.
pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), csv::Error> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_then_quoted_csv() {
        let history = [EpochStats {
            epoch: 0,
            lr: 1e-3,
            total: 1.5,
            group: 0.5,
            action: 0.5,
            train_acc: 0.25,
        }];
        let text = history_table(&["config: {\"a\":1}\nsecond".into()], &history);
        assert!(text.starts_with("# config: {\"a\":1}\n# second\nepoch,lr,L_MT"));
        let (h, rows) = read_table(&text).unwrap();
        assert_eq!(h.len(), 6);
        assert_eq!(rows[0][1], "0.001");

        let p = Prediction {
            id: "a,b".into(),
            group_true: 0,
            group_pred: 1,
            group_probs: vec![0.5, 0.5],
            actions_true: vec![5],
            actions_pred: vec![5],
        };
        let (h, rows) = read_table(&predictions_table(&[], &[p])).unwrap();
        assert_eq!(
            h,
            ["sample_id", "group", "p_r_spike", "p_l_spike", "action_0"]
        );
        assert_eq!(rows[0], ["a,b", "l_spike", "0.5", "0.5", "standing"]);
    }

    #[test]
    fn confusion_layout() {
        let mut m = ConfusionMatrix::new(8);
        m.record(2, 3);
        let (h, rows) = read_table(&confusion_table(&[], &m)).unwrap();
        assert_eq!(h[1], "r_spike");
        assert_eq!(rows[2][0], "r_set");
        assert_eq!(rows[2][4], "1");
    }
}
