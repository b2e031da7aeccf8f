# stub-interpreter reference script
emit checker 16 16 out.png
print wrote out.png
