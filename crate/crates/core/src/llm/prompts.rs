//! Built-in prompt templates for the five roles.

use super::template::PromptTemplate;

pub const SUMMARIZE_ID: &str = "summarize";
pub const EXPLORE_ID: &str = "explore";
pub const GENERATE_KNOWLEDGE_ID: &str = "generate-knowledge";
pub const GENERATE_QUESTION_ID: &str = "generate-question";
pub const SELECT_ID: &str = "select";
pub const ANSWER_ID: &str = "answer";
pub const ANSWER_DIRECT_ID: &str = "answer-direct";

const SUMMARIZE: &str = "You are a professional medical expert.
Given the following question and a retrieved document, distill the useful information that can assist in answering the question.
Focus only on details directly supported by evidence from the document, and avoid including irrelevant or speculative content.
If the document does not contain relevant information, return \"No useful information.\"
Do not attempt to answer the question\u{2014}only summarize the essential knowledge needed for answering it accurately.

Input:
Retrieved Document: {documents}
Question: {question}

Output:
Useful Information:";

const EXPLORE: &str = "You are a professional medical expert.
Given the question and several pieces of useful information extracted from retrieved documents, identify the most important missing knowledge required to answer the question thoroughly.
Analyze the question to determine key knowledge components, compare them with the provided information, and identify the gaps.
Select the three most critical and non-redundant missing knowledge points, each expressed as a concise conceptual title rather than a full sentence.

Input:
Useful Information: {information}
Question: {question}

Output Format:
- Reasoning: [Detailed explanation]
- Knowledge 1: [Conceptual title 1]
- Knowledge 2: [Conceptual title 2]
- Knowledge 3: [Conceptual title 3]";

const GENERATE_KNOWLEDGE: &str = "You are a professional medical expert.
Given the following medical question and a single knowledge point, generate a concise background document that provides relevant explanations or context strictly based on the given knowledge point.
Do not infer or guess the correct answer, and avoid mentioning any answer options.
Write in English and keep the content within 256 words.

Input:
Question: {question}
Knowledge Point: {knowledge_point}

Output:
Background Document:";

const GENERATE_QUESTION: &str = "You are a professional medical expert.
Given the following medical question, generate a concise background document that provides relevant explanations or context for the question.
Do not infer or guess the correct answer, and avoid mentioning any answer options.
Write in English and keep the content within 256 words.

Input:
Question: {question}

Output:
Background Document:";

const SELECT: &str = "You are a professional medical expert.
Given a medical question and ten candidate passages (each labeled with an identifier [id]), select the top-5 most useful passages for answering the question accurately.

Follow the reasoning steps below:
1. Information Requirements Identification: Identify the key knowledge points necessary to answer the question thoroughly.
2. Requirement-to-Passage Mapping: Match each passage to the corresponding knowledge point(s) and classify irrelevant ones into a \u{201c}No Useful Information\u{201d} group.
3. Document Selection for Completeness and Conciseness: Choose up to five passages that together provide comprehensive coverage of the key knowledge points while minimizing redundancy.

Input:
Documents: {documents}
Question: {question}

Output Format:
- Reasoning: [Detailed explanation]
- Final Selection: [id1] [id2] [id3] [id4] [id5]";

const ANSWER: &str = "You are a professional medical expert.
Given the question and several retrieved or generated documents, reason step-by-step and provide the final answer.
First, extract and utilize useful information from the documents; if insufficient, rely on your medical knowledge to complete the reasoning.
Return your output in JSON format containing both reasoning and the final answer choice.

Input:
Retrieved Documents: {documents}
Question: {question}

Output Format:
{\"reasoning\": \"explanation\", \"answer_choice\": \"A/B/C/...\"}";

const ANSWER_DIRECT: &str = "You are a professional medical expert.
Given the question, reason step-by-step and provide the final answer.
Rely on your medical knowledge to complete the reasoning.
Return your output in JSON format containing both reasoning and the final answer choice.

Input:
Question: {question}

Output Format:
{\"reasoning\": \"explanation\", \"answer_choice\": \"A/B/C/...\"}";

pub fn summarize() -> PromptTemplate {
    PromptTemplate::new(SUMMARIZE_ID, SUMMARIZE)
}

pub fn explore() -> PromptTemplate {
    PromptTemplate::new(EXPLORE_ID, EXPLORE)
}

pub fn generate_knowledge() -> PromptTemplate {
    PromptTemplate::new(GENERATE_KNOWLEDGE_ID, GENERATE_KNOWLEDGE)
}

pub fn generate_question() -> PromptTemplate {
    PromptTemplate::new(GENERATE_QUESTION_ID, GENERATE_QUESTION)
}

pub fn select() -> PromptTemplate {
    PromptTemplate::new(SELECT_ID, SELECT)
}

pub fn answer() -> PromptTemplate {
    PromptTemplate::new(ANSWER_ID, ANSWER)
}

pub fn answer_direct() -> PromptTemplate {
    PromptTemplate::new(ANSWER_DIRECT_ID, ANSWER_DIRECT)
}

pub fn all() -> Vec<PromptTemplate> {
    vec![
        summarize(),
        explore(),
        generate_knowledge(),
        generate_question(),
        select(),
        answer(),
        answer_direct(),
    ]
}
