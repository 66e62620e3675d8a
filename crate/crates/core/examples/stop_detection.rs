//! Detecting infeasibility declarations in assistant messages.
//!
//! ```bash
//! cargo run --example stop_detection
//! ```

use toolstop::agents::{default_stop_patterns, detect_stop, StopPattern, FEASIBILITY_PROMPT};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("system prompt:\n{FEASIBILITY_PROMPT}\n");

    let mut patterns = default_stop_patterns();
    // Deployments can add their own phrasings.
    patterns.push(StopPattern::new("outside_toolset", r"(?i)\boutside (of )?my toolset\b")?);

    let messages = [
        "STOP: there is no tool for currency conversion",
        "I don't have a tool to generate UUIDv4",
        "This request cannot be completed with the available tools.",
        "Converting 100 USD gives 92.4 EUR.",
        "Here are some external APIs you could try: exchangerate.host.",
        "That lookup is outside my toolset, sorry.",
        "stop: lowercase does not count",
    ];
    for m in messages {
        match detect_stop(m, &patterns) {
            Some(s) => println!("STOP  [{:<26}] {:?}", s.matched_pattern, s.reason),
            None => println!("go    {m:?}"),
        }
    }
    Ok(())
}
