//! Versioned JSON and CSV artifacts, written atomically.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result wrapped with the code version and the full configuration echo.
pub fn json_document<T: Serialize>(command: &str, config: &Value, result: &T) -> String {
    let doc = json!({
        "version": VERSION,
        "command": command,
        "config": config,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable result");
    s.push('\n');
    s
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) => {
            let items: Vec<String> = a.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect();
            out.push(format!("{prefix}={}", items.join(",")));
        }
        Value::Null => out.push(format!("{prefix}=")),
        _ => out.push(format!("{prefix}={}", v.to_string().trim_matches('"'))),
    }
}

/// CSV with `#` header lines carrying the version and the configuration.
pub struct Table {
    lines: Vec<String>,
}

impl Table {
    pub fn new(command: &str, config: &Value, columns: &[&str]) -> Self {
        let mut lines = vec![format!("# kslayers {VERSION}"), format!("# command={command}")];
        let mut echo = Vec::new();
        flatten("", config, &mut echo);
        lines.extend(echo.into_iter().map(|e| format!("# {e}")));
        lines.push(columns.join(","));
        Self { lines }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.lines.push(cells.join(","));
    }

    pub fn render(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_echoes_config() {
        let cfg = json!({"lambda": 1e-3, "shape": {"eta": 0.8}, "b_grid": [0.1, 0.2]});
        let mut t = Table::new("x", &cfg, &["a", "b"]);
        t.row(&[num(1.0), num(2.5)]);
        let s = t.render();
        assert!(s.starts_with("# kslayers "));
        assert!(s.contains("# shape.eta=0.8"));
        assert!(s.contains("# b_grid=0.1,0.2"));
        assert!(s.ends_with("a,b\n1e0,2.5e0\n"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "f.txt", "one").unwrap();
        write_atomic(dir.path(), "f.txt", "two").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("f.txt")).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
