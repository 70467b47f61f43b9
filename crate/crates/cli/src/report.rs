//! Single-page HTML summary of a completed run. Figures are embedded as
//! data URIs so the page is self-contained and marker ids in different
//! SVGs cannot collide.

use std::fmt::Write as _;
use std::time::Instant;

use base64::Engine as _;

use crate::config::DataSource;
use crate::fail::{CliError, CliResult};
use crate::rundir::{read_json, RunDir};
use crate::stages::{
    expected_stages, explain_summary_path, metrics_path, stage_name, ClusterSummary, ExplainSummary,
    ModelMetrics, CLUSTER_JSON, HEATMAP_SVG,
};

pub const REPORT_HTML: &str = "report.html";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn figure(out: &mut String, run: &RunDir, rel: &str, caption: &str) -> CliResult<()> {
    let bytes = std::fs::read(run.path(rel))?;
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    let _ = writeln!(
        out,
        r#"<figure><img alt="{0}" src="data:image/svg+xml;base64,{data}"/><figcaption>{0}</figcaption></figure>"#,
        esc(caption)
    );
    Ok(())
}

pub fn report(run: &mut RunDir) -> CliResult<()> {
    let start = Instant::now();
    let c = run.config.clone();
    let missing: Vec<String> = expected_stages(&c)
        .into_iter()
        .filter(|(stage, hash)| !run.is_current(stage, hash))
        .map(|(stage, _)| stage)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Incomplete(missing));
    }

    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>SHAP analysis report</title>\n");
    h.push_str(
        "<style>body{font-family:sans-serif;max-width:1100px;margin:2em auto;color:#222}\
         table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #ccc;padding:4px 8px;text-align:right}\
         th{background:#f4f4f4}td.l,th.l{text-align:left}figure{margin:1.5em 0}img{max-width:100%}\
         code{background:#f4f4f4;padding:1px 4px}</style>\n</head>\n<body>\n",
    );
    h.push_str("<h1>SHAP analysis report</h1>\n");
    let source = match &c.data {
        DataSource::Simulate(s) => format!("simulated, {} × {}", s.n_samples, s.n_features),
        DataSource::Csv(csv) => format!("CSV {}", csv.path.display()),
        DataSource::Idx(idx) => format!("IDX {}", idx.images.display()),
    };
    let _ = writeln!(
        h,
        "<p>Data: {}. Master seed <code>{}</code>. Config hash <code>{}</code>. shapvec {}.</p>",
        esc(&source),
        c.seed,
        &run.manifest.config_hash[..16],
        env!("CARGO_PKG_VERSION")
    );

    // Classifier performance.
    h.push_str("<h2>Classifier performance</h2>\n<table>\n");
    let first: ModelMetrics = read_json(&run.path(&metrics_path(c.models.kinds[0])))?;
    let n_classes = first.test.per_class.len();
    h.push_str("<tr><th class=\"l\">model</th><th>accuracy</th>");
    for k in 0..n_classes {
        let _ = write!(h, "<th>precision {k}</th><th>recall {k}</th>");
    }
    h.push_str("<th class=\"l\">hyperparameters</th></tr>\n");
    for &kind in &c.models.kinds {
        let m: ModelMetrics = read_json(&run.path(&metrics_path(kind)))?;
        let _ = write!(h, "<tr><td class=\"l\">{kind}</td><td>{:.3}</td>", m.test.accuracy);
        for cm in &m.test.per_class {
            let _ = write!(h, "<td>{:.3}</td><td>{:.3}</td>", cm.precision, cm.recall);
        }
        let params = serde_json::to_string(&m.spec)?;
        let _ = writeln!(h, "<td class=\"l\"><code>{}</code></td></tr>", esc(&params));
    }
    let _ = writeln!(h, "</table>\n<p>Test support: {} samples.</p>", first.test.support);

    // Explanations.
    h.push_str("<h2>SHAP values</h2>\n<table>\n<tr><th class=\"l\">model</th><th class=\"l\">method</th><th>samples</th><th>features</th><th>classes</th><th>max additivity error</th></tr>\n");
    let explained = c.explained_models();
    for &kind in &explained {
        let s: ExplainSummary = read_json(&run.path(&explain_summary_path(kind)))?;
        let _ = writeln!(
            h,
            "<tr><td class=\"l\">{kind}</td><td class=\"l\">{}</td><td>{}</td><td>{}</td><td>{}</td><td>{:.1e}</td></tr>",
            esc(&s.method),
            s.n_samples,
            s.n_features,
            s.n_classes,
            s.max_additivity_error
        );
    }
    h.push_str("</table>\n");
    for &kind in &explained {
        figure(&mut h, run, &format!("plots/bar-{kind}.svg"), &format!("Mean |SHAP| per feature and class, {kind}"))?;
    }

    // Subgroups.
    let cs: ClusterSummary = read_json(&run.path(CLUSTER_JSON))?;
    h.push_str("<h2>Subgroups</h2>\n");
    let _ = writeln!(
        h,
        "<p>HDBSCAN (min cluster size {}, min samples {}) on the flattened {} SHAP vectors: {} clusters, {} noise points.</p>",
        cs.min_cluster_size, cs.min_samples, cs.source, cs.n_clusters, cs.noise
    );
    if let Some(p) = &cs.purity {
        h.push_str("<h3>Cluster purity against true classes</h3>\n<table>\n<tr><th class=\"l\">cluster</th><th>size</th>");
        let classes = p.contingency.first().map_or(0, Vec::len);
        for k in 0..classes {
            let _ = write!(h, "<th>class {k}</th>");
        }
        h.push_str("<th>majority</th><th>purity</th></tr>\n");
        for (ci, row) in p.contingency.iter().enumerate() {
            let _ = write!(h, "<tr><td class=\"l\">cluster {}</td><td>{}</td>", ci + 1, cs.sizes[ci]);
            for v in row {
                let _ = write!(h, "<td>{v}</td>");
            }
            let _ = writeln!(h, "<td>{}</td><td>{:.3}</td></tr>", p.majority[ci], p.purity[ci]);
        }
        let _ = write!(h, "<tr><td class=\"l\">noise</td><td>{}</td>", cs.noise);
        for v in &p.noise {
            let _ = write!(h, "<td>{v}</td>");
        }
        h.push_str("<td></td><td></td></tr>\n</table>\n");
    }
    for &kind in &explained {
        figure(&mut h, run, &format!("embed/{kind}-class.svg"), &format!("{kind} SHAP vectors coloured by class"))?;
        figure(&mut h, run, &format!("embed/{kind}-cluster.svg"), &format!("{kind} SHAP vectors coloured by cluster"))?;
    }
    figure(&mut h, run, HEATMAP_SVG, "Raw feature values averaged within clusters")?;

    // Waterfalls.
    h.push_str("<h2>Waterfall plots</h2>\n");
    for &kind in &explained {
        figure(&mut h, run, &format!("plots/paths-{kind}.svg"), &format!("Clustered high-dimensional waterfall paths, {kind}"))?;
    }
    for &kind in &explained {
        let record = &run.manifest.stages[&stage_name("waterfall", kind)];
        for rel in record.artifacts.iter().filter(|a| a.contains("/waterfall-")) {
            figure(&mut h, run, rel, &format!("Classical waterfall, {kind}: {}", rel.trim_start_matches("plots/")))?;
        }
    }
    h.push_str("</body>\n</html>\n");

    std::fs::write(run.path(REPORT_HTML), h)?;
    let hash = crate::config::digest(&("report", expected_stages(&c)));
    run.record("report", hash, vec![REPORT_HTML.into()], (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0)
}

