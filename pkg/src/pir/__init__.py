# Batch private information retrieval
