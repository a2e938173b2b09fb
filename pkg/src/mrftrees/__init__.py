"""MCMC for grid Markov random fields by partitioning into trees."""
