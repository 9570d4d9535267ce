"""Game-theory experiment harness for LLM agents."""
