"""DehazePipeline at desk scale."""
