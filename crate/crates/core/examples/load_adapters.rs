//! Loading benchmark records through the dataset adapters.
//!
//! ```bash
//! cargo run --example load_adapters
//! ```

use toolstop::task::{parse_dataset, parse_suite, write_dataset, DatasetFormat};

const BFCL: &str = r#"{"id": "simple_7", "question": [[{"role": "user", "content": "Area of a circle with radius 3?"}]],
 "function": [{"name": "circle_area", "description": "Area of a circle",
   "parameters": {"type": "dict", "properties": {"radius": {"type": "float"}}, "required": ["radius"]}}]}"#;

const STB: &str = r#"[{"query_id": 88, "query": "Find the lyrics of Yesterday",
 "api_list": [{"tool_name": "Genius Lyrics", "api_name": "Search Song",
   "api_description": "search songs by title",
   "required_parameters": [{"name": "q", "type": "STRING"}], "optional_parameters": []}]}]"#;

const API_BANK: &str = r#"{"id": "level1-3", "query": "Set an alarm for 7am",
 "apis": [{"name": "AddAlarm", "description": "Create an alarm",
   "input_parameters": {"time": {"type": "str", "description": "HH:MM"}}}]}"#;

const TAU: &str = r#"{"task_id": "retail-12", "instruction": "Cancel order #W1 because it was placed by mistake",
 "tools": [{"type": "function", "function": {"name": "cancel_pending_order", "description": "Cancel an order",
   "parameters": {"type": "object", "properties": {"order_id": {"type": "string"}, "reason": {"type": "string"}},
   "required": ["order_id", "reason"]}}}]}"#;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut all = Vec::new();
    for (format, text) in [
        (DatasetFormat::Bfcl, BFCL),
        (DatasetFormat::StableToolBench, STB),
        (DatasetFormat::ApiBank, API_BANK),
        (DatasetFormat::TauBench, TAU),
    ] {
        let tasks = parse_dataset(text, format)?;
        for t in &tasks {
            let tools: Vec<String> = t
                .tool_pool
                .iter()
                .map(|tool| format!("{}({})", tool.name, tool.parameters.keys().cloned().collect::<Vec<_>>().join(", ")))
                .collect();
            println!("{:<16} {:<22} {}", format.id(), t.task_id, tools.join(" "));
        }
        all.extend(tasks);
    }

    // Everything converts to the canonical document and back.
    let canonical = write_dataset(&all);
    let back = parse_suite(&canonical)?;
    assert_eq!(back.len(), all.len());
    println!("\ncanonical round trip: {} tasks, {} bytes", back.len(), canonical.len());
    Ok(())
}
