use std::fmt::Write as _;

use serde::Serialize;

use super::BenchmarkResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub cells: Vec<Option<f64>>,
    /// Mean over every column; absent when the row misses any column.
    pub average: Option<f64>,
}

/// Runs × tasks, in the layout of a results table.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub tasks: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Columns are the union of task names in first-seen order.
    pub fn build<'a>(runs: impl IntoIterator<Item = (String, &'a BenchmarkResult)>) -> Self {
        let runs: Vec<(String, &BenchmarkResult)> = runs.into_iter().collect();
        let mut tasks: Vec<String> = Vec::new();
        for (_, r) in &runs {
            for name in r.per_task.keys() {
                if !tasks.contains(name) {
                    tasks.push(name.clone());
                }
            }
        }
        let rows = runs
            .iter()
            .map(|(label, r)| {
                let cells: Vec<Option<f64>> = tasks.iter().map(|t| r.score(t)).collect();
                let average = (!cells.is_empty() && cells.iter().all(Option::is_some))
                    .then(|| cells.iter().flatten().sum::<f64>() / cells.len() as f64);
                ComparisonRow {
                    label: label.clone(),
                    cells,
                    average,
                }
            })
            .collect();
        Self { tasks, rows }
    }

    /// Markdown table, scores to two decimals, `-` for absent cells.
    pub fn render(&self) -> String {
        let fmt = |v: &Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let _ = writeln!(out, "| Run | {} | Average |", self.tasks.join(" | "));
        let _ = writeln!(out, "|---|{}---|", "---|".repeat(self.tasks.len()));
        for row in &self.rows {
            let cells: Vec<String> = row.cells.iter().map(fmt).collect();
            let _ = writeln!(out, "| {} | {} | {} |", row.label, cells.join(" | "), fmt(&row.average));
        }
        out
    }
}
