"""Recommendation algorithms sharing the Recommender contract."""
