# Development data helpers
