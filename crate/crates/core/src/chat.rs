//! Interactive loop: type commands, answer the planner's questions, inspect
//! the last episode's trace.

use std::io::{self, BufRead, Write};

use crate::bench::Experiment;
use crate::llm::Session;
use crate::resolve::{Approach, EpisodeLog, Situation, UserAgent, UserInquiry};
use crate::simworld::PerceptionModel;

const HELP: &str = "\
Commands:
  <verb> <object>      e.g. \"Bring a sugar_box.\" (verbs: find, take, bring)
  :trace               show the last episode log
  :approach <name>     okb | okb_llm | okb_llm_mem
  :situation <name>    with_defaults | without_defaults
  :help                this text
  :quit                leave";

/// A person answering at the terminal.
struct TerminalUser<'a, R, W> {
    input: &'a mut R,
    output: &'a mut W,
}

impl<R: BufRead, W: Write> UserAgent for TerminalUser<'_, R, W> {
    fn answer(&mut self, inquiry: &UserInquiry) -> String {
        let _ = write!(self.output, "robot> {}\nyou> ", inquiry.question);
        let _ = self.output.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => String::new(),
            Ok(_) => line.trim().to_string(),
        }
    }
}

pub struct Repl<'e, R, W> {
    experiment: &'e Experiment,
    pub approach: Approach,
    pub situation: Situation,
    input: R,
    output: W,
    last_log: Option<EpisodeLog>,
    episodes: u64,
}

impl<'e, R: BufRead, W: Write> Repl<'e, R, W> {
    pub fn new(
        experiment: &'e Experiment,
        approach: Approach,
        situation: Situation,
        input: R,
        output: W,
    ) -> Self {
        Self {
            experiment,
            approach,
            situation,
            input,
            output,
            last_log: None,
            episodes: 0,
        }
    }

    /// Runs until `:quit` or end of input.
    pub fn run(&mut self) -> io::Result<()> {
        writeln!(
            self.output,
            "bringme chat ({} / {}). Type :help for commands.",
            self.approach, self.situation
        )?;
        loop {
            write!(self.output, "> ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let line = line.trim();
            match line.split_once(' ').unwrap_or((line, "")) {
                ("", _) => {}
                (":quit" | ":q", _) => return Ok(()),
                (":help", _) => writeln!(self.output, "{HELP}")?,
                (":trace", _) => match &self.last_log {
                    Some(log) => write!(self.output, "{}", log.to_ndjson())?,
                    None => writeln!(self.output, "no episode yet")?,
                },
                (":approach", name) => match name.trim().parse() {
                    Ok(a) => self.approach = a,
                    Err(e) => writeln!(self.output, "{e}")?,
                },
                (":situation", name) => match name.trim().parse() {
                    Ok(s) => self.situation = s,
                    Err(e) => writeln!(self.output, "{e}")?,
                },
                _ => self.episode(line)?,
            }
        }
    }

    fn episode(&mut self, command: &str) -> io::Result<()> {
        let exp = self.experiment;
        let config = self.approach.config(self.situation);
        let session = if config.use_llm {
            Session::new(
                exp.backend.create(),
                exp.system_prompt(),
                exp.params,
                config.use_memory,
            )
            .ok()
        } else {
            None
        };
        let mut perception =
            PerceptionModel::for_episode(exp.spec.detect_prob, exp.spec.seed, self.episodes);
        self.episodes += 1;
        let mut user = TerminalUser {
            input: &mut self.input,
            output: &mut self.output,
        };
        let result = exp.planner().run_episode(
            &exp.world,
            session,
            &mut user,
            &mut perception,
            config,
            command,
        );
        let out = &mut self.output;
        for plan in &result.plans {
            let visits: Vec<&str> = plan.visit_list.iter().map(|v| v.as_str()).collect();
            writeln!(out, "plan: {}", visits.join(" -> "))?;
        }
        match &result.failure {
            None => writeln!(
                out,
                "done in {:.1} s after {} visit(s), {} question(s), {} model call(s)",
                result.completion_time,
                result.visits,
                result.inquiries.len(),
                result.llm_calls
            )?,
            Some(reason) => writeln!(out, "failed: {reason}")?,
        }
        self.last_log = Some(result.log);
        Ok(())
    }
}
