//! Header comment block written at the top of every CSV.

use std::io::Write;

use serde::Serialize;

/// Everything needed to reproduce an output file.
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub seed: u64,
}

impl<C: Serialize> RunManifest<'_, C> {
    pub fn write_to(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let config = serde_json::to_string(self.config).map_err(std::io::Error::other)?;
        let argv: Vec<String> = std::env::args().collect();
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# argv: {}", argv.join(" "))?;
        writeln!(out, "# config: {config}")?;
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# version: odlt {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(
            out,
            "# started: {}",
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
        )?;
        Ok(())
    }
}

/// Runtime column: milliseconds, or `NA` when timing is disabled.
pub fn runtime_field(seconds: Option<f64>) -> String {
    match seconds {
        Some(s) => format!("{:.6}", s * 1e3),
        None => "NA".to_string(),
    }
}
