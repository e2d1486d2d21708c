//! Plain-text metric reports: one key=value line per metric, then the same
//! numbers as a single JSON object line for machine consumption.

use crate::metrics::MetricReport;

pub fn format_report(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("cd={}\n", report.cd));
    out.push_str(&format!("jsd_bev={}\n", report.jsd_bev));
    for (res, iou) in &report.iou {
        out.push_str(&format!("iou@{res}={iou}\n"));
    }
    let mut json = format!("{{\"cd\": {}, \"jsd_bev\": {}", report.cd, report.jsd_bev);
    for (res, iou) in &report.iou {
        json.push_str(&format!(", \"iou@{res}\": {iou}"));
    }
    json.push('}');
    out.push_str(&json);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_then_json() {
        let report = MetricReport {
            cd: 0.125,
            jsd_bev: 0.03,
            iou: vec![(0.5, 1.0), (0.2, 0.75), (0.1, 0.5)],
        };
        let text = format_report(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "cd=0.125",
                "jsd_bev=0.03",
                "iou@0.5=1",
                "iou@0.2=0.75",
                "iou@0.1=0.5",
                "{\"cd\": 0.125, \"jsd_bev\": 0.03, \"iou@0.5\": 1, \"iou@0.2\": 0.75, \"iou@0.1\": 0.5}",
            ]
        );
    }

    #[test]
    fn full_precision_survives() {
        let report = MetricReport {
            cd: 0.1234567890123456,
            jsd_bev: 1e-17,
            iou: vec![],
        };
        let text = format_report(&report);
        assert!(text.contains("cd=0.1234567890123456"), "{text}");
        // printed values parse back to the exact f64
        let jsd_line = text.lines().find(|l| l.starts_with("jsd_bev=")).unwrap();
        let back: f64 = jsd_line["jsd_bev=".len()..].parse().unwrap();
        assert_eq!(back, 1e-17);
    }
}
