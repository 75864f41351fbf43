//! Splits a hand-written output into reasoning steps and shows which step
//! owns every token.

use spae::model::{map_token_to_step, StepSlot, TokenTrajectory, Vocab};

fn main() -> spae::Result<()> {
    let v = Vocab::with_digits(10)?;
    let d = v.delim();
    // "3 + 4 DELIM = 7 DELIM WAIT 7 DELIM THINK_END ANSWER 7 EOT"
    let add = v.op_token(spae::model::Op::Add);
    let tokens = vec![
        3,
        add,
        4,
        d,
        7,
        d,
        v.wait(),
        7,
        d,
        v.think_end(),
        v.answer(),
        7,
        v.eot(),
    ];
    let n = tokens.len();
    let t = TokenTrajectory::from_tokens(0, tokens, vec![0.0; n], &v, false);
    t.validate()?;

    println!("output : {}", v.render(&t.tokens));
    println!("reasoning ends at token {} ({} steps)", t.reasoning_end, t.num_steps());
    for k in 1..=t.num_steps() {
        let span = t.step_span(k)?;
        println!(
            "step {k}: [{}, {}) {}",
            span.start,
            span.end,
            v.render(t.step_tokens(k)?)
        );
    }
    let map = map_token_to_step(&t);
    let owners: Vec<String> = map
        .slots()
        .iter()
        .map(|s| match s {
            StepSlot::Step(k) => k.to_string(),
            StepSlot::Summary => "S".into(),
        })
        .collect();
    println!("token -> step: [{}]", owners.join(", "));
    Ok(())
}
