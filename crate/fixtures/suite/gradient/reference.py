# stub-interpreter reference script
emit gradient 16 16 out.png
print wrote out.png
