# Command handlers, one per CLI verb
