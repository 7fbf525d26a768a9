use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lscmf::io::{self, MatrixFormat};
use lscmf::{ObservedMatrix, ViewLayout};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub views: BTreeMap<String, usize>,
    pub matrices: Vec<MatrixEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub row_view: String,
    pub col_view: String,
    #[serde(default)]
    pub layer: u32,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    /// Inferred from the file extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<MatrixFormat>,
}

impl MatrixEntry {
    fn format(&self) -> MatrixFormat {
        self.format.unwrap_or_else(|| match self.path.extension().and_then(|e| e.to_str()) {
            Some("bin") => MatrixFormat::Bin,
            _ => MatrixFormat::Csv,
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read manifest `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("invalid manifest `{}`: {e}", path.display())))
}

/// Builds the layout and reads every matrix file.
pub fn load(manifest: &Manifest, base: &Path) -> Result<(ViewLayout, Vec<ObservedMatrix>), CliError> {
    let mut layout = ViewLayout::new();
    for (name, dim) in &manifest.views {
        layout.add_view(name.clone(), *dim).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let mut matrices = Vec::with_capacity(manifest.matrices.len());
    for entry in &manifest.matrices {
        let edge = layout
            .add_edge(&entry.row_view, &entry.col_view, entry.layer)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let path = base.join(&entry.path);
        let data = io::read_matrix(&path, entry.format())
            .map_err(|e| CliError::Validation(format!("cannot read `{}`: {e}", path.display())))?;
        let (rows, cols) = layout.shape(&edge);
        if (data.nrows(), data.ncols()) != (rows, cols) {
            return Err(CliError::Validation(format!(
                "`{}` holds a {}x{} matrix but edge {} expects {rows}x{cols}",
                path.display(),
                data.nrows(),
                data.ncols(),
                layout.describe(&edge)
            )));
        }
        matrices.push(ObservedMatrix::new(edge, data));
    }
    Ok((layout, matrices))
}
