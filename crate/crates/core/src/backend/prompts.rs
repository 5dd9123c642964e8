//! Prompt templates for every model role, and detection of which template a
//! rendered prompt came from (used by the synthetic backend).

use std::collections::BTreeMap;

use crate::dataset::{Label, McqItem};

const EVALUATION_HEAD: &str =
    "You are a student taking an exam. Please read the following question carefully and choose the answer you believe is correct.";

const GENERATION_HEAD: &str = "You are a professional expert in generating distractors for multiple-choice questions. Your task is to generate high-quality REPLACEMENT distractors for the given question.";

const REWRITE_HEAD: &str = "You are a professional expert in generating distractors for multiple-choice questions. Your task is to evaluate the existing distractors and improve them if necessary.";

const EQUIVALENCE_HEAD: &str = "You are an expert in evaluating whether two answer options in a multiple-choice question are semantically equivalent.";

const EXPANSION_HEAD: &str = "I have a multiple-choice question with ";

const CONVERTIBILITY_HEAD: &str = "You are an expert in educational assessment. Evaluate whether the following Multiple-Choice Question can be transformed into a standalone QA pair.";

const CONVERSION_HEAD: &str = "I will give you a multiple-choice question with answer options and its correct answer. Please convert it into a fill-in-the-blank or short-answer question.";

/// Marker line carrying texts the generator must not reuse. Rendered inside
/// the feedback slot of the generation prompt.
pub const AVOID_MARKER: &str = "Do NOT reuse any of these option texts: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Evaluation,
    Generation,
    SingleRoundRewrite,
    Equivalence,
    Expansion,
    Convertibility,
    Conversion,
}

impl PromptKind {
    pub fn detect(prompt: &str) -> Option<Self> {
        let kinds = [
            (EVALUATION_HEAD, PromptKind::Evaluation),
            (GENERATION_HEAD, PromptKind::Generation),
            (REWRITE_HEAD, PromptKind::SingleRoundRewrite),
            (EQUIVALENCE_HEAD, PromptKind::Equivalence),
            (EXPANSION_HEAD, PromptKind::Expansion),
            (CONVERTIBILITY_HEAD, PromptKind::Convertibility),
            (CONVERSION_HEAD, PromptKind::Conversion),
        ];
        kinds
            .into_iter()
            .find(|(head, _)| prompt.starts_with(head))
            .map(|(_, kind)| kind)
    }
}

/// Answer-sampling prompt. The final line asks for a bare label so strength
/// estimation needs no chain-of-thought.
pub fn evaluation(item: &McqItem) -> String {
    format!(
        "{EVALUATION_HEAD}\n\nQuestion:\n{}\n\nOptions:\n{}\n\nRespond with only the letter of your chosen option.",
        item.stem,
        item.render_options()
    )
}

pub(crate) fn labels_json(map: &BTreeMap<Label, String>) -> String {
    serde_json::to_string(map).expect("string map serializes")
}

pub struct GenerationFields<'a> {
    pub question_text: &'a str,
    pub correct_option: Label,
    pub correct_answer: &'a str,
    pub existing: &'a BTreeMap<Label, String>,
    pub failed_feedback: &'a str,
}

pub fn generation(f: &GenerationFields<'_>) -> String {
    let question_text = f.question_text;
    let correct_option = f.correct_option;
    let correct_answer = f.correct_answer;
    let num_distractors = f.existing.len();
    let existing_distractors = labels_json(f.existing);
    let failed_feedback = f.failed_feedback;
    format!(
        r#"{GENERATION_HEAD}

Question Information:
Question Text: {question_text}
Correct Option: {correct_option}
Correct Answer: {correct_answer}
Number of Distractors to Generate: {num_distractors}
Existing Distractors (to be replaced): {existing_distractors}

Your Task:
You need to REPLACE the existing distractors with better, more effective ones. The new distractors should be more challenging and attractive to students who lack careful thinking or sufficient knowledge.

Requirements:
1. The generated distractors must be plausible and able to attract students who are not careful enough or have insufficient knowledge
2. Distractors should be consistent with the correct answer in form and style
3. **CRITICAL**: Distractors MUST NOT be the same as or similar to the correct answer "{correct_answer}". They should be different but plausible alternatives.
4. **CRITICAL**: Do NOT use the correct option identifier "{correct_option}" as a key in your output.
5. **CRITICAL**: ONLY use the SAME option identifiers as the existing distractors. For example, if existing distractors use keys A, C, D, your output must ONLY use keys A, C, D. Do NOT create new keys like E, F, G, etc.
6. Distractors should have discrimination, avoiding duplication or being too similar to each other
7. The new distractors should be more effective than the existing ones - they should be harder to distinguish from the correct answer or more tempting to select

{failed_feedback}

Output Format:
Please return the result in JSON format with the following fields:
- distractors: dictionary type, with keys as option identifiers (MUST use the same keys as existing distractors, e.g., if existing has A, C, D, output must have A, C, D)
- reasoning: string type, explaining your rationale for generating these distractors

Example:
If existing distractors are: {{"A": "old distractor 1", "C": "old distractor 2", "D": "old distractor 3"}}
Your output should be: {{"A": "new distractor 1", "C": "new distractor 2", "D": "new distractor 3"}}
Do NOT output: {{"E": "...", "F": "...", "G": "..."}}"#
    )
}

pub fn single_round_rewrite(item: &McqItem) -> String {
    let question_text = &item.stem;
    let correct_option = item.correct;
    let correct_answer = item.correct_text();
    let all_options = labels_json(&item.options_map());
    format!(
        r#"{REWRITE_HEAD}

Question Information:
Question Text: {question_text}
Correct Option: {correct_option}
Correct Answer: {correct_answer}
Existing Options (with all options including correct answer): {all_options}

Your Task:
Review the existing distractors (incorrect options). You have TWO choices:
1. If you think the existing distractors are already reasonable and effective, you can KEEP them as-is
2. If you think some or all distractors need improvement, REPLACE only those that need improvement

Requirements for generating/keeping distractors:
1. Distractors must be plausible and able to attract students who are not careful enough or have insufficient knowledge
2. Distractors should be consistent with the correct answer in form and style
3. **CRITICAL**: Distractors MUST NOT be the same as or similar to the correct answer "{correct_answer}"
4. **CRITICAL**: Do NOT use the correct option identifier "{correct_option}" as a key in your output
5. **CRITICAL**: ONLY use the SAME option identifiers as the existing distractors. For example, if existing distractors use keys A, C, D, your output must ONLY use keys A, C, D
6. Distractors should have discrimination, avoiding duplication or being too similar to each other
7. If you decide to keep existing distractors, output them exactly as they are

Decision:
First, decide whether you want to KEEP all existing distractors or IMPROVE some/all of them.

Output Format:
Please return the result in JSON format with the following fields:
- decision: string type, either "KEEP_ALL" or "IMPROVE"
- distractors: dictionary type, with keys as option identifiers (MUST use the same keys as existing distractors)
  - If decision is "KEEP_ALL", output the original distractors unchanged
  - If decision is "IMPROVE", output the improved distractors (you can keep some and improve others)
- reasoning: string type, explaining your decision and rationale

Example 1 (Keep all):
If existing options are: {{"A": "distractor 1", "B": "correct answer", "C": "distractor 2", "D": "distractor 3"}}
And correct option is B, you might output:
{{"decision": "KEEP_ALL", "distractors": {{"A": "distractor 1", "C": "distractor 2", "D": "distractor 3"}}, "reasoning": "The existing distractors are already well-designed and plausible."}}

Example 2 (Improve some):
If existing options are: {{"A": "obviously wrong", "B": "correct answer", "C": "reasonable distractor", "D": "too similar to B"}}
And correct option is B, you might output:
{{"decision": "IMPROVE", "distractors": {{"A": "improved distractor 1", "C": "reasonable distractor", "D": "improved distractor 2"}}, "reasoning": "Options A and D need improvement, but C is already good."}}"#
    )
}

pub fn equivalence(question_text: &str, text1: &str, text2: &str) -> String {
    format!(
        r#"{EQUIVALENCE_HEAD} Your task is to determine if Text 2 conveys EXACTLY the same meaning as Text 1 (the correct answer), such that both would be equally correct.

Question Context:
{question_text}

Text 1 (Correct Answer): {text1}
Text 2 (Generated Distractor - to be checked): {text2}

CRITICAL: Are these two texts IDENTICAL in meaning? Would both be equally correct as the answer to the question above?

Evaluation Guidelines:
1. **Be VERY STRICT**: Only mark as EQUIVALENT if the texts are COMPLETELY identical in meaning
2. **Context matters**: Evaluate the texts specifically in the context of the question above

Please respond with ONLY ONE of the following:
- "EQUIVALENT" - if and only if the texts are completely identical in meaning and would both be equally correct
- "NOT_EQUIVALENT" - if there is ANY difference in meaning, specificity, certainty, or scope

Your response:"#
    )
}

pub fn expansion(item: &McqItem, target_num: usize) -> String {
    let current_num = item.n_options();
    let new_options_num = target_num - current_num;
    let raw_question = format!("{}\n{}", item.stem, item.render_options());
    format!(
        r#"{EXPANSION_HEAD}{current_num} options, one of which is correct, and I need to expand it to a {target_num}-option multiple-choice question.
Please generate {new_options_num} additional plausible but incorrect options to accompany the original options.

Requirements:
1. The new options should be plausible and similar in style to the existing options
2. The new options should be clearly incorrect (not ambiguous)
3. The new options should test different aspects of the question topic
4. Please think step by step about how to create good distractors

IMPORTANT - Output Format:
You MUST output ONLY a valid JSON object wrapped in ```json and ``` markers.
Do NOT include any other text before or after the JSON code block.
The JSON must have exactly these two fields:
- "thinking": a string containing your reasoning process
- "new_options": an array of exactly {new_options_num} strings

Example format:
```json
{{
  "thinking": "I will create options that are similar to the existing ones but test different concepts...",
  "new_options": ["Option 1", "Option 2", "Option 3"]
}}
```

Here is the original question:
<original question>
{raw_question}
</original question>

Now generate exactly {new_options_num} new incorrect options in the JSON format specified."#
    )
}

pub fn convertibility(question: &str, correct_answer: &str) -> String {
    format!(
        r#"{CONVERTIBILITY_HEAD}

Original Question: {question}

Correct Answer: {correct_answer}

Task:
Determine if the stem is understandable and answerable without seeing the options.

Criteria for "NOT_CONVERTIBLE":
- Contains phrases like "Which of the following", "EXCEPT", "NOT true", "All of the above".
- Requires comparing options to find the "best" answer (e.g., "best describes", "best explains").
- The answer depends entirely on the specific choices given.
- Refers to figures, graphs, or tables that are part of the options.

Criteria for "CONVERTIBLE":
- The question has a clear, specific answer that doesn't depend on seeing options.
- The question is complete and self-contained.

CRITICAL: You MUST end your response with one of these EXACT lines:
FINAL_LABEL: CONVERTIBLE
OR
FINAL_LABEL: NOT_CONVERTIBLE

Example Output 1:
Analysis: The question asks "Which of the following is a fruit?" which implies a selection from a specific list. Without options, the answer is too open-ended.
FINAL_LABEL: NOT_CONVERTIBLE

Example Output 2:
Analysis: The question asks "What is the most likely diagnosis?" which is clear and specific. It can be answered without seeing the options.
FINAL_LABEL: CONVERTIBLE

Your Output:"#
    )
}

pub fn conversion(question_with_options: &str, answer: &str) -> String {
    format!(
        r#"{CONVERSION_HEAD}

IMPORTANT INSTRUCTIONS:
1. PRESERVE ALL CONTEXT: Keep the entire clinical scenario, patient information, symptoms, lab values, physical exam findings, and background information EXACTLY as given. Do NOT summarize, shorten, or remove any details.

2. ONLY modify the question format: Remove the answer options (A, B, C, D) and convert the final question into a fill-in-the-blank or short-answer format.

3. The modified question should ask for the same information, but without providing the multiple-choice options.

4. Provide the correct answer as a short, direct response (no explanation needed).

Original question with options:
{question_with_options}

Correct answer:
{answer}

Return the output using this format:
<Question>{{Modified Question - with ALL original context preserved}}</Question>
<Answer>{{Short Answer}}</Answer>

Example:
If given: "A 50-year-old man presents with chest pain... BP 120/80... What is the diagnosis? A. MI B. Angina C. PE D. GERD"

You should return: "A 50-year-old man presents with chest pain... BP 120/80... What is the diagnosis?" (keeping all context, just removing A/B/C/D options)"#
    )
}

/// Returns the text between `start` and the next occurrence of `end`.
pub(crate) fn between<'a>(prompt: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = prompt.find(start)? + start.len();
    let rest = &prompt[from..];
    let to = rest.find(end)?;
    Some(&rest[..to])
}
