//! Recording a trace turn by turn, then reading the file back, including a
//! trace that was interrupted before it was finalized.
//!
//! ```bash
//! cargo run --example trace_store
//! ```

use toolstop::trace::{
    read_trace_file, total_tokens, MessageTurn, Outcome, ToolCallStep, ToolStatus, TraceRecorder, Turn,
};
use toolstop::Feasibility;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("run-0001.jsonl");
    let recorder = TraceRecorder::append_to(&path)?;

    recorder.open("t1::alpha", "t1", "alpha")?;
    recorder.append(
        "t1::alpha",
        Turn::ToolCall(ToolCallStep {
            turn: 1,
            tool_name: "get_weather".into(),
            arguments: r#"{"city":"Oslo"}"#.into(),
            result: r#"{"temp_c":4}"#.into(),
            status: ToolStatus::Ok,
            tokens_in: 410,
            tokens_out: 22,
        }),
    )?;
    recorder.append(
        "t1::alpha",
        Turn::Message(MessageTurn {
            turn: 2,
            role: "assistant".into(),
            text: "It is 4 degrees in Oslo.".into(),
            tokens_in: 455,
            tokens_out: 9,
        }),
    )?;
    let trace = recorder.finalize("t1::alpha", Outcome::Success, Feasibility::Feasible, None, None)?;
    println!("finalized {} with {} tokens", trace.trace_id, total_tokens(&trace).total);

    // A finalized trace takes no more turns.
    let late = recorder.append(
        "t1::alpha",
        Turn::Message(MessageTurn {
            turn: 3,
            role: "assistant".into(),
            text: "late".into(),
            tokens_in: 0,
            tokens_out: 0,
        }),
    );
    println!("append after finalize: {}", late.unwrap_err());

    // A run that dies mid-trace leaves an open trace behind.
    recorder.open("t2::alpha", "t2", "alpha")?;
    recorder.append(
        "t2::alpha",
        Turn::ToolCall(ToolCallStep {
            turn: 1,
            tool_name: "get_weather".into(),
            arguments: r#"{"city":"Bergen"}"#.into(),
            result: String::new(),
            status: ToolStatus::Error,
            tokens_in: 398,
            tokens_out: 20,
        }),
    )?;
    drop(recorder);

    let contents = read_trace_file(&path)?;
    println!(
        "file holds {} finalized trace(s); incomplete: {:?}",
        contents.finalized.len(),
        contents.incomplete
    );
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}
