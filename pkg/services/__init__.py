# Runtime, data and training services
