use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{BottomUp, Granularity, TdcaNetwork, TdcaSettings, CREDITNET_HEADER};
use crate::error::{Result, TdcaError};
use crate::nn::{expect_header, format_specs, parse_specs, read_f64s, read_line, write_f64s, Mlp};

fn settings_line(tdca: &TdcaNetwork) -> String {
    let s = &tdca.settings;
    let target = match &tdca.bottom_up {
        BottomUp::Classifier(specs) => format!("classifier={}", format_specs(specs).replace(' ', ",")),
        BottomUp::Point(d) => format!("point={d}"),
    };
    format!(
        "settings mode={} rule={} gate={} eta={} eta_out={} {target}",
        s.mode,
        s.rule,
        s.gate,
        s.credit_scale,
        s.output_eta()
    )
}

/// Writes the header, architecture, granularity and settings lines followed
/// by the credit-net weights as little-endian `f64`.
pub fn save_tdca(tdca: &TdcaNetwork, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TdcaError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| TdcaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{CREDITNET_HEADER}")?;
        writeln!(w, "architecture {}", format_specs(tdca.net.specs()))?;
        writeln!(w, "granularity {}", tdca.settings.granularity)?;
        writeln!(w, "{}", settings_line(tdca))?;
        write_f64s(w, tdca.net.flatten().values())?;
        w.flush()
    };
    write(&mut w).map_err(|e| TdcaError::io(path, e))
}

pub fn load_tdca(path: &Path) -> Result<TdcaNetwork> {
    let file = File::open(path).map_err(|e| TdcaError::io(path, e))?;
    let mut r = BufReader::new(file);
    expect_header(&mut r, path, CREDITNET_HEADER)?;
    let format_err = |msg: String| TdcaError::Format {
        path: path.into(),
        msg,
    };
    let arch = read_line(&mut r, path)?;
    let specs = parse_specs(
        arch.strip_prefix("architecture ")
            .ok_or_else(|| format_err(format!("expected an architecture line, found `{arch}`")))?,
    )?;
    let gran = read_line(&mut r, path)?;
    let granularity: Granularity = gran
        .strip_prefix("granularity ")
        .ok_or_else(|| format_err(format!("expected a granularity line, found `{gran}`")))?
        .parse()?;
    let line = read_line(&mut r, path)?;
    let body = line
        .strip_prefix("settings ")
        .ok_or_else(|| format_err(format!("expected a settings line, found `{line}`")))?;
    let kv: HashMap<&str, &str> = body.split_whitespace().filter_map(|t| t.split_once('=')).collect();
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| format_err(format!("settings lack `{k}`")));
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| format_err(format!("bad number for `{k}`")))
    };
    let bottom_up = if let Some(c) = kv.get("classifier") {
        BottomUp::Classifier(parse_specs(&c.replace(',', " "))?)
    } else {
        BottomUp::Point(
            get("point")?
                .parse()
                .map_err(|_| format_err("bad point dimension".into()))?,
        )
    };
    let settings = TdcaSettings {
        granularity,
        mode: get("mode")?.parse()?,
        rule: get("rule")?.parse()?,
        gate: get("gate")?.parse()?,
        credit_scale: num("eta")?,
        output_scale: Some(num("eta_out")?),
        hidden_width: if specs.len() > 1 { specs[0].out_dim } else { 0 },
    };
    let count = specs.iter().map(|s| s.param_count()).sum();
    let params = read_f64s(&mut r, path, count)?;
    let net = Mlp::from_params(&specs, &params)?;
    TdcaNetwork::from_net(net, settings, bottom_up)
}
