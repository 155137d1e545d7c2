"""Rewards, state features, offline dataset synthesis and conservative Q-learning."""
