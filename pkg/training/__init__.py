# Likelihood losses and the training loop
